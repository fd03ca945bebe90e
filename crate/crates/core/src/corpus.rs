//! Interaction-log and item-catalog ingestion.
//!
//! Interactions arrive as a headerless UTF-8 TSV (`user_id<TAB>item_id<TAB>timestamp`,
//! LF line endings); item metadata as JSON-lines objects with `item_id`,
//! `title` and `categories`. Loading preserves file order, which is the
//! tie-breaker everywhere a timestamp comparison ties.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type Timestamp = u64;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(pub String);

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemId(pub String);

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for UserId {
    fn from(s: &str) -> Self {
        UserId(s.to_owned())
    }
}

impl From<&str> for ItemId {
    fn from(s: &str) -> Self {
        ItemId(s.to_owned())
    }
}

/// One (user, item, time) event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: UserId,
    pub item: ItemId,
    pub timestamp: Timestamp,
}

/// An interaction list plus per-user and per-item position indices.
///
/// Positions index into `interactions` (file order). Per-user and per-item
/// position lists are sorted by `(timestamp, position)`, so iterating a
/// user's positions walks their history chronologically with file-order
/// tie-breaking.
#[derive(Debug, Clone)]
pub struct InteractionLog {
    interactions: Vec<Interaction>,
    user_index: BTreeMap<UserId, Vec<usize>>,
    item_index: BTreeMap<ItemId, Vec<usize>>,
}

impl InteractionLog {
    pub fn from_interactions(interactions: Vec<Interaction>) -> Self {
        let mut user_index: BTreeMap<UserId, Vec<usize>> = BTreeMap::new();
        let mut item_index: BTreeMap<ItemId, Vec<usize>> = BTreeMap::new();
        let mut order: Vec<usize> = (0..interactions.len()).collect();
        order.sort_by_key(|&p| (interactions[p].timestamp, p));
        for &p in &order {
            let it = &interactions[p];
            user_index.entry(it.user.clone()).or_default().push(p);
            item_index.entry(it.item.clone()).or_default().push(p);
        }
        InteractionLog {
            interactions,
            user_index,
            item_index,
        }
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.user_index.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_index.len()
    }

    pub fn users(&self) -> impl Iterator<Item = &UserId> {
        self.user_index.keys()
    }

    pub fn items(&self) -> impl Iterator<Item = &ItemId> {
        self.item_index.keys()
    }

    /// Chronologically sorted positions of one user's interactions.
    pub fn user_positions(&self, user: &UserId) -> &[usize] {
        self.user_index.get(user).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn item_positions(&self, item: &ItemId) -> &[usize] {
        self.item_index.get(item).map(Vec::as_slice).unwrap_or(&[])
    }

    /// All positions in global chronological order, ties by file order.
    pub fn chronological_positions(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.interactions.len()).collect();
        order.sort_by_key(|&p| (self.interactions[p].timestamp, p));
        order
    }
}

/// Load the interactions TSV. Every well-formed row is kept in file order;
/// a malformed row aborts with its line number.
pub fn load_interactions(path: &Path) -> Result<InteractionLog> {
    let text = fs::read_to_string(path)?;
    let display = path.display().to_string();
    let mut interactions = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let mut cols = line.split('\t');
        let (user, item, ts) = match (cols.next(), cols.next(), cols.next(), cols.next()) {
            (Some(u), Some(i), Some(t), None) => (u, i, t),
            _ => {
                return Err(Error::Parse {
                    path: display,
                    line: lineno,
                    msg: format!("expected 3 tab-separated columns, got {:?}", line),
                })
            }
        };
        if user.is_empty() || item.is_empty() {
            return Err(Error::Parse {
                path: display,
                line: lineno,
                msg: "empty user_id or item_id".into(),
            });
        }
        let timestamp: Timestamp = ts.parse().map_err(|_| Error::Parse {
            path: display.clone(),
            line: lineno,
            msg: format!("invalid timestamp {:?}", ts),
        })?;
        interactions.push(Interaction {
            user: UserId(user.to_owned()),
            item: ItemId(item.to_owned()),
            timestamp,
        });
    }
    if interactions.is_empty() {
        return Err(Error::EmptyLog(display));
    }
    Ok(InteractionLog::from_interactions(interactions))
}

/// Per-item metadata: a title and a list of category tags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemMeta {
    pub item_id: ItemId,
    pub title: String,
    pub categories: Vec<String>,
}

impl ItemMeta {
    fn validate(&self) -> Result<()> {
        if self.item_id.0.is_empty() {
            return Err(Error::Catalog("empty item_id".into()));
        }
        if self.title.is_empty() && self.categories.is_empty() {
            return Err(Error::Catalog(format!(
                "item {} has neither title nor categories",
                self.item_id
            )));
        }
        Ok(())
    }
}

/// All known item metadata, keyed by item id.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ItemCatalog {
    pub items: BTreeMap<ItemId, ItemMeta>,
}

impl ItemCatalog {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, item: &ItemId) -> Option<&ItemMeta> {
        self.items.get(item)
    }

    /// Synthesize metadata (title = item id, no categories) for log items
    /// missing from the catalog, so identifier schemes cover every item.
    /// Returns the ids that had to be synthesized.
    pub fn cover_log(&mut self, log: &InteractionLog) -> Vec<ItemId> {
        let mut synthesized = Vec::new();
        for item in log.items() {
            if !self.items.contains_key(item) {
                self.items.insert(
                    item.clone(),
                    ItemMeta {
                        item_id: item.clone(),
                        title: item.0.clone(),
                        categories: Vec::new(),
                    },
                );
                synthesized.push(item.clone());
            }
        }
        synthesized
    }
}

/// Load the JSON-lines item metadata file.
pub fn load_item_metadata(path: &Path) -> Result<ItemCatalog> {
    let text = fs::read_to_string(path)?;
    let display = path.display().to_string();
    let mut catalog = ItemCatalog::default();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let meta: ItemMeta = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: display.clone(),
            line: lineno,
            msg: format!("invalid item metadata: {e}"),
        })?;
        meta.validate().map_err(|e| Error::Parse {
            path: display.clone(),
            line: lineno,
            msg: e.to_string(),
        })?;
        if catalog.items.contains_key(&meta.item_id) {
            return Err(Error::Parse {
                path: display,
                line: lineno,
                msg: format!("duplicate item_id {}", meta.item_id),
            });
        }
        catalog.items.insert(meta.item_id.clone(), meta);
    }
    Ok(catalog)
}

/// Result of k-core filtering. `emptied` flags the (legal) case where the
/// fixpoint removed everything.
#[derive(Debug, Clone)]
pub struct KCoreOutcome {
    pub log: InteractionLog,
    pub emptied: bool,
    pub rounds: usize,
}

/// Restrict the log to its k-core: the unique maximal sub-log in which every
/// remaining user and item has at least `k` interactions. Computed by
/// alternating full-pass removal until a fixpoint; interaction file order is
/// preserved in the output.
pub fn k_core_filter(log: &InteractionLog, k: usize) -> KCoreOutcome {
    assert!(k >= 1, "k-core requires k >= 1");
    let mut keep = vec![true; log.len()];
    let mut rounds = 0;
    loop {
        rounds += 1;
        let mut changed = false;
        for key_by_user in [true, false] {
            let mut degree: BTreeMap<&str, usize> = BTreeMap::new();
            for (p, it) in log.interactions().iter().enumerate() {
                if keep[p] {
                    let key = if key_by_user { &it.user.0 } else { &it.item.0 };
                    *degree.entry(key).or_insert(0) += 1;
                }
            }
            for (p, it) in log.interactions().iter().enumerate() {
                if keep[p] {
                    let key = if key_by_user { &it.user.0 } else { &it.item.0 };
                    if degree[key.as_str()] < k {
                        keep[p] = false;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    let retained: Vec<Interaction> = log
        .interactions()
        .iter()
        .zip(&keep)
        .filter(|(_, &kept)| kept)
        .map(|(it, _)| it.clone())
        .collect();
    let emptied = retained.is_empty();
    KCoreOutcome {
        log: InteractionLog::from_interactions(retained),
        emptied,
        rounds,
    }
}

/// Chronological per-user item histories (ties broken by file order).
pub fn build_user_histories(log: &InteractionLog) -> BTreeMap<UserId, Vec<ItemId>> {
    let mut histories = BTreeMap::new();
    for user in log.users() {
        let history: Vec<ItemId> = log
            .user_positions(user)
            .iter()
            .map(|&p| log.interactions()[p].item.clone())
            .collect();
        histories.insert(user.clone(), history);
    }
    histories
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn write_tsv(rows: &[(&str, &str, u64)]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for (u, i, t) in rows {
            writeln!(f, "{u}\t{i}\t{t}").unwrap();
        }
        f
    }

    fn log_of(rows: &[(&str, &str, u64)]) -> InteractionLog {
        InteractionLog::from_interactions(
            rows.iter()
                .map(|(u, i, t)| Interaction {
                    user: UserId((*u).into()),
                    item: ItemId((*i).into()),
                    timestamp: *t,
                })
                .collect(),
        )
    }

    #[test]
    fn load_three_rows() {
        let f = write_tsv(&[("u1", "i1", 5), ("u1", "i2", 7), ("u2", "i1", 6)]);
        let log = load_interactions(f.path()).unwrap();
        assert_eq!(log.n_users(), 2);
        assert_eq!(log.n_items(), 2);
        let hist = build_user_histories(&log);
        assert_eq!(
            hist[&UserId("u1".into())],
            vec![ItemId("i1".into()), ItemId("i2".into())]
        );
    }

    #[test]
    fn equal_timestamps_keep_file_order() {
        let f = write_tsv(&[("u1", "a", 9), ("u1", "b", 9), ("u1", "c", 9)]);
        let log = load_interactions(f.path()).unwrap();
        let hist = build_user_histories(&log);
        assert_eq!(
            hist[&UserId("u1".into())],
            vec![ItemId("a".into()), ItemId("b".into()), ItemId("c".into())]
        );
    }

    #[test]
    fn malformed_timestamp_reports_line() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "u1\ti1\t5").unwrap();
        writeln!(f, "u1\ti1\tfoo").unwrap();
        let err = load_interactions(f.path()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_column_count_is_parse_error() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "u1\ti1").unwrap();
        assert!(matches!(
            load_interactions(f.path()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn empty_file_is_empty_log_error() {
        let f = tempfile::NamedTempFile::new().unwrap();
        assert!(matches!(
            load_interactions(f.path()),
            Err(Error::EmptyLog(_))
        ));
    }

    #[test]
    fn metadata_single_line() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            f,
            r#"{{"item_id":"i1","title":"Red Ball","categories":["toys"]}}"#
        )
        .unwrap();
        let catalog = load_item_metadata(f.path()).unwrap();
        assert_eq!(catalog.len(), 1);
        assert_eq!(catalog.get(&ItemId("i1".into())).unwrap().title, "Red Ball");
    }

    #[test]
    fn metadata_duplicate_id_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"item_id":"i1","title":"A","categories":[]}}"#).unwrap();
        writeln!(f, r#"{{"item_id":"i1","title":"B","categories":[]}}"#).unwrap();
        let err = load_item_metadata(f.path()).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn metadata_empty_title_and_categories_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"item_id":"i1","title":"","categories":[]}}"#).unwrap();
        assert!(load_item_metadata(f.path()).is_err());
    }

    #[test]
    fn cover_log_synthesizes_missing_items() {
        let log = log_of(&[("u1", "i1", 1), ("u1", "i2", 2)]);
        let mut catalog = ItemCatalog::default();
        catalog.items.insert(
            ItemId("i1".into()),
            ItemMeta {
                item_id: ItemId("i1".into()),
                title: "Red Ball".into(),
                categories: vec![],
            },
        );
        let synthesized = catalog.cover_log(&log);
        assert_eq!(synthesized, vec![ItemId("i2".into())]);
        assert_eq!(catalog.get(&ItemId("i2".into())).unwrap().title, "i2");
    }

    #[test]
    fn k_core_removes_light_user() {
        // u1:{i1,i2}, u2:{i1,i2}, u3:{i1}; with k=2 only u3 goes.
        let log = log_of(&[
            ("u1", "i1", 1),
            ("u1", "i2", 2),
            ("u2", "i1", 3),
            ("u2", "i2", 4),
            ("u3", "i1", 5),
        ]);
        let out = k_core_filter(&log, 2);
        assert!(!out.emptied);
        assert_eq!(out.log.n_users(), 2);
        assert_eq!(out.log.n_items(), 2);
        assert!(out.log.users().all(|u| u.0 != "u3"));
    }

    #[test]
    fn k_core_k1_is_identity() {
        let log = log_of(&[("u1", "i1", 1), ("u2", "i2", 2), ("u3", "i1", 3)]);
        let out = k_core_filter(&log, 1);
        assert_eq!(out.log.interactions(), log.interactions());
    }

    #[test]
    fn k_core_cascade_to_empty_sets_flag() {
        // A chain: each user/item has degree <= 2 but removal cascades.
        // u1-i1, u2-i1, u2-i2, u3-i2: k=2 removes u1,u3 first, then i1,i2
        // drop to degree 1, then u2 drops, leaving nothing.
        let log = log_of(&[
            ("u1", "i1", 1),
            ("u2", "i1", 2),
            ("u2", "i2", 3),
            ("u3", "i2", 4),
        ]);
        let out = k_core_filter(&log, 2);
        assert!(out.emptied);
        assert!(out.log.is_empty());
    }

    #[test]
    fn histories_sort_by_timestamp() {
        let log = log_of(&[("u1", "i1", 5), ("u1", "i2", 3)]);
        let hist = build_user_histories(&log);
        assert_eq!(
            hist[&UserId("u1".into())],
            vec![ItemId("i2".into()), ItemId("i1".into())]
        );
    }

    fn arb_rows() -> impl Strategy<Value = Vec<(u8, u8, u8)>> {
        prop::collection::vec((0u8..12, 0u8..12, 0u8..20), 1..60)
    }

    fn log_from(rows: &[(u8, u8, u8)]) -> InteractionLog {
        InteractionLog::from_interactions(
            rows.iter()
                .map(|(u, i, t)| Interaction {
                    user: UserId(format!("u{u}")),
                    item: ItemId(format!("i{i}")),
                    timestamp: *t as u64,
                })
                .collect(),
        )
    }

    proptest! {
        #[test]
        fn k_core_is_idempotent(rows in arb_rows(), k in 1usize..4) {
            let log = log_from(&rows);
            let once = k_core_filter(&log, k);
            let twice = k_core_filter(&once.log, k);
            prop_assert_eq!(once.log.interactions(), twice.log.interactions());
        }

        #[test]
        fn k_core_degrees_hold(rows in arb_rows(), k in 1usize..4) {
            let out = k_core_filter(&log_from(&rows), k);
            for u in out.log.users() {
                prop_assert!(out.log.user_positions(u).len() >= k);
            }
            for i in out.log.items() {
                prop_assert!(out.log.item_positions(i).len() >= k);
            }
        }

        #[test]
        fn k_core_membership_ignores_row_order(rows in arb_rows(), k in 1usize..4) {
            let mut rev = rows.clone();
            rev.reverse();
            let a = k_core_filter(&log_from(&rows), k);
            let b = k_core_filter(&log_from(&rev), k);
            let key = |it: &Interaction| (it.user.clone(), it.item.clone(), it.timestamp);
            let mut ma: Vec<_> = a.log.interactions().to_vec();
            let mut mb: Vec<_> = b.log.interactions().to_vec();
            ma.sort_by_key(key);
            mb.sort_by_key(key);
            prop_assert_eq!(ma, mb);
        }

        #[test]
        fn histories_preserve_multisets(rows in arb_rows()) {
            let log = log_from(&rows);
            let hist = build_user_histories(&log);
            for user in log.users() {
                let mut from_hist = hist[user].clone();
                let mut from_log: Vec<ItemId> = log.interactions().iter()
                    .filter(|it| &it.user == user)
                    .map(|it| it.item.clone())
                    .collect();
                from_hist.sort();
                from_log.sort();
                prop_assert_eq!(from_hist, from_log);
            }
        }
    }
}
