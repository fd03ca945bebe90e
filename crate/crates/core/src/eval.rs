//! Recall@K / NDCG@K over the warm, user-cold, and item-cold protocols.
//!
//! The item-cold protocol evaluates warm users' test cases against the full
//! catalog (warm trie plus inserted cold items) and partitions them by
//! target warmth. The user-cold protocol evaluates against the warm catalog
//! only and partitions by user warmth; cases it cannot express (cold target,
//! or a cold-user context touching cold items) are excluded and counted.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::ItemId;
use crate::decode::{beam_search, build_trie, insert_items, IdTrie};
use crate::identifiers::{IdentifierMap, TokenId};
use crate::model::{SequenceModel, TokenSequence};
use crate::protocol::{SettingTag, SplitManifest};
use crate::{Error, Result};

/// 1 iff the target appears at rank <= k.
pub fn recall_at_k(ranked: &crate::decode::RankedList, target: &ItemId, k: usize) -> u8 {
    assert!(k >= 1);
    match ranked.rank_of(target) {
        Some(rank) if rank <= k => 1,
        _ => 0,
    }
}

/// Single-relevant-item NDCG: 1/log2(rank + 1) for rank <= k, else 0.
pub fn ndcg_at_k(ranked: &crate::decode::RankedList, target: &ItemId, k: usize) -> f64 {
    assert!(k >= 1);
    match ranked.rank_of(target) {
        Some(rank) if rank <= k => 1.0 / ((rank + 1) as f64).log2(),
        _ => 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSetting {
    ItemColdProtocol,
    UserColdProtocol,
}

impl std::fmt::Display for EvalSetting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EvalSetting::ItemColdProtocol => f.write_str("item_cold"),
            EvalSetting::UserColdProtocol => f.write_str("user_cold"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseScore {
    pub case_id: usize,
    pub recall_at_k: u8,
    pub ndcg_at_k: f64,
    pub setting_tags: BTreeSet<SettingTag>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionSummary {
    pub partition: String,
    pub n: usize,
    pub excluded: usize,
    pub recall_mean: Option<f64>,
    pub ndcg_mean: Option<f64>,
}

impl PartitionSummary {
    fn from_scores(partition: &str, scores: &[&CaseScore], excluded: usize) -> Self {
        let n = scores.len();
        let (recall_mean, ndcg_mean) = if n == 0 {
            (None, None)
        } else {
            (
                Some(scores.iter().map(|s| s.recall_at_k as f64).sum::<f64>() / n as f64),
                Some(scores.iter().map(|s| s.ndcg_at_k).sum::<f64>() / n as f64),
            )
        };
        PartitionSummary {
            partition: partition.into(),
            n,
            excluded,
            recall_mean,
            ndcg_mean,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub setting: EvalSetting,
    pub warm_test: PartitionSummary,
    pub cold_test: PartitionSummary,
    pub case_scores: Vec<CaseScore>,
}

/// Per-run aggregate mirroring one table row-group: one section per
/// protocol, each split into warm-test and cold-test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub scheme: String,
    pub model: String,
    pub k: usize,
    pub config_digest: String,
    pub protocols: Vec<ProtocolReport>,
}

impl EvalReport {
    pub fn protocol(&self, setting: EvalSetting) -> Option<&ProtocolReport> {
        self.protocols.iter().find(|p| p.setting == setting)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub const CSV_HEADER: &'static str = "scheme,model,setting,partition,metric,K,value,n";

    /// Flat rows: `scheme,model,setting,partition,metric,K,value,n`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        out.push_str(&self.csv_rows());
        out
    }

    /// Rows only (no header), for combining reports.
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for proto in &self.protocols {
            for part in [&proto.warm_test, &proto.cold_test] {
                for (metric, value) in [
                    ("recall", part.recall_mean),
                    ("ndcg", part.ndcg_mean),
                ] {
                    let value = value.map(|v| v.to_string()).unwrap_or_default();
                    out.push_str(&format!(
                        "{},{},{},{},{},{},{},{}\n",
                        self.scheme,
                        self.model,
                        proto.setting,
                        part.partition,
                        metric,
                        self.k,
                        value,
                        part.n
                    ));
                }
            }
        }
        out
    }

    pub fn digest(&self) -> Result<String> {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update(self.to_json()?.as_bytes());
        Ok(hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect())
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub k: usize,
    pub beam_width: usize,
    /// Tail-truncate evaluation contexts to this many items (None = full).
    pub max_context_items: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            k: 10,
            beam_width: 64,
            max_context_items: None,
        }
    }
}

struct PreparedCase {
    case_id: usize,
    context: TokenSequence,
    target: ItemId,
    tags: BTreeSet<SettingTag>,
}

/// Evaluate one protocol over the manifest's test cases.
pub fn evaluate<M: SequenceModel + Sync>(
    model: &M,
    manifest: &SplitManifest,
    id_map: &IdentifierMap,
    setting: EvalSetting,
    opts: &EvalOptions,
) -> Result<ProtocolReport> {
    if opts.beam_width < opts.k || opts.k == 0 {
        return Err(Error::Eval("need beam_width >= k >= 1".into()));
    }
    let trie = build_protocol_trie(manifest, id_map, setting)?;

    let mut prepared: Vec<PreparedCase> = Vec::new();
    let mut excluded_warm = 0usize;
    let mut excluded_cold = 0usize;
    for (case_id, case) in manifest.test_cases() {
        let cold_user = case.setting_tags.contains(&SettingTag::ColdUser);
        let cold_target = manifest.cold_items.contains(&case.target);
        match setting {
            EvalSetting::ItemColdProtocol => {
                // Warm users only; partitioned by target warmth.
                if cold_user {
                    continue;
                }
            }
            EvalSetting::UserColdProtocol => {
                // Candidates are warm items only: cases the trie cannot
                // express are excluded, as are cold-user cases whose
                // context strays outside the warm catalog.
                let context_touches_cold = case
                    .context
                    .iter()
                    .any(|i| manifest.cold_items.contains(i));
                if cold_target || (cold_user && context_touches_cold) {
                    if cold_user {
                        excluded_cold += 1;
                    } else {
                        excluded_warm += 1;
                    }
                    continue;
                }
            }
        }
        let context_items: Vec<&ItemId> = match opts.max_context_items {
            Some(cap) if case.context.len() > cap => {
                case.context[case.context.len() - cap..].iter().collect()
            }
            _ => case.context.iter().collect(),
        };
        let mut token_slices: Vec<&[TokenId]> = Vec::with_capacity(context_items.len());
        for item in context_items {
            token_slices.push(id_map.tokens_of(item).ok_or_else(|| {
                Error::Eval(format!("context item {item} missing from identifier map"))
            })?);
        }
        prepared.push(PreparedCase {
            case_id,
            context: TokenSequence::from_context_items(token_slices),
            target: case.target.clone(),
            tags: case.setting_tags.clone(),
        });
    }

    let case_scores: Vec<CaseScore> = prepared
        .par_iter()
        .map(|case| {
            let ranked = beam_search(model, &case.context, &trie, opts.beam_width, opts.k)?;
            Ok(CaseScore {
                case_id: case.case_id,
                recall_at_k: recall_at_k(&ranked, &case.target, opts.k),
                ndcg_at_k: ndcg_at_k(&ranked, &case.target, opts.k),
                setting_tags: case.tags.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let (warm_scores, cold_scores): (Vec<&CaseScore>, Vec<&CaseScore>) = match setting {
        EvalSetting::ItemColdProtocol => case_scores
            .iter()
            .partition(|s| !s.setting_tags.contains(&SettingTag::ColdItem)),
        EvalSetting::UserColdProtocol => case_scores
            .iter()
            .partition(|s| !s.setting_tags.contains(&SettingTag::ColdUser)),
    };
    Ok(ProtocolReport {
        setting,
        warm_test: PartitionSummary::from_scores("warm_test", &warm_scores, excluded_warm),
        cold_test: PartitionSummary::from_scores("cold_test", &cold_scores, excluded_cold),
        case_scores,
    })
}

fn build_protocol_trie(
    manifest: &SplitManifest,
    id_map: &IdentifierMap,
    setting: EvalSetting,
) -> Result<IdTrie> {
    let warm: BTreeSet<ItemId> = manifest.warm_items.clone();
    let mut trie = build_trie(id_map, &warm)?;
    if setting == EvalSetting::ItemColdProtocol && !manifest.cold_items.is_empty() {
        insert_items(&mut trie, id_map, &manifest.cold_items)?;
    }
    Ok(trie)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::RankedList;

    fn ranked(ids: &[&str]) -> RankedList {
        RankedList {
            entries: ids
                .iter()
                .enumerate()
                .map(|(i, id)| (ItemId((*id).into()), -(i as f64)))
                .collect(),
            flagged_short: false,
        }
    }

    #[test]
    fn recall_cases() {
        let r = ranked(&["a", "b", "c"]);
        assert_eq!(recall_at_k(&r, &ItemId("a".into()), 10), 1);
        assert_eq!(recall_at_k(&r, &ItemId("c".into()), 2), 0);
        assert_eq!(recall_at_k(&r, &ItemId("zz".into()), 10), 0);
    }

    #[test]
    fn recall_rank_eleven_misses_at_ten() {
        let ids: Vec<String> = (0..12).map(|i| format!("i{i:02}")).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let r = ranked(&refs);
        assert_eq!(recall_at_k(&r, &ItemId("i10".into()), 10), 0); // rank 11
        assert_eq!(recall_at_k(&r, &ItemId("i09".into()), 10), 1); // rank 10
    }

    #[test]
    fn ndcg_analytic_values() {
        let ids: Vec<String> = (0..12).map(|i| format!("i{i:02}")).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let r = ranked(&refs);
        assert_eq!(ndcg_at_k(&r, &ItemId("i00".into()), 10), 1.0);
        assert_eq!(ndcg_at_k(&r, &ItemId("i02".into()), 10), 0.5); // rank 3
        assert_eq!(ndcg_at_k(&r, &ItemId("i10".into()), 10), 0.0); // rank 11
    }

    #[test]
    fn ndcg_never_exceeds_recall() {
        let ids: Vec<String> = (0..20).map(|i| format!("i{i:02}")).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let r = ranked(&refs);
        for i in 0..20 {
            let item = ItemId(format!("i{i:02}"));
            let rec = recall_at_k(&r, &item, 10) as f64;
            let ndcg = ndcg_at_k(&r, &item, 10);
            assert!(ndcg <= rec + 1e-12);
            assert!(ndcg >= 0.0);
        }
    }

    #[test]
    fn metrics_ignore_entries_below_k() {
        let long = ranked(&["a", "b", "c", "d", "e"]);
        let short = ranked(&["a", "b", "c"]);
        let target = ItemId("b".into());
        assert_eq!(
            recall_at_k(&long, &target, 3),
            recall_at_k(&short, &target, 3)
        );
        assert_eq!(ndcg_at_k(&long, &target, 3), ndcg_at_k(&short, &target, 3));
    }

    #[test]
    fn csv_has_one_row_per_metric_per_partition() {
        let report = EvalReport {
            scheme: "rq".into(),
            model: "markov".into(),
            k: 10,
            config_digest: "deadbeef".into(),
            protocols: vec![ProtocolReport {
                setting: EvalSetting::ItemColdProtocol,
                warm_test: PartitionSummary {
                    partition: "warm_test".into(),
                    n: 2,
                    excluded: 0,
                    recall_mean: Some(0.5),
                    ndcg_mean: Some(0.4),
                },
                cold_test: PartitionSummary {
                    partition: "cold_test".into(),
                    n: 0,
                    excluded: 0,
                    recall_mean: None,
                    ndcg_mean: None,
                },
                case_scores: vec![],
            }],
        };
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 1 + 4);
        assert!(csv.contains("rq,markov,item_cold,warm_test,recall,10,0.5,2"));
        assert!(csv.contains("rq,markov,item_cold,cold_test,recall,10,,0"));
    }
}
