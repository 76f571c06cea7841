//! Phone inventory: 31 phones plus silence, with archi-phone merge rules.
//!
//! The inventory is loaded from a small line-oriented text file:
//!
//! ```text
//! phone i Ê a ...         # inventory phones, indices in listed order
//! silence sil             # silence class, always index 31
//! merge Ê e ɛ             # raw symbols folded onto an inventory phone
//! ```
//!
//! Blank lines and `#` comments are ignored.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Number of phones in the inventory, silence excluded.
pub const NUM_PHONES: usize = 31;
/// Number of classifier outputs: phones plus silence.
pub const NUM_CLASSES: usize = NUM_PHONES + 1;

/// Shipped French inventory.
pub const DEFAULT_INVENTORY: &str = include_str!("../data/french_inventory.txt");

#[derive(Debug, Error)]
pub enum InventoryError {
    #[error("{path}: cannot read inventory: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("inventory line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("inventory lists {found} phones, expected {NUM_PHONES}")]
    PhoneCount { found: usize },
    #[error("inventory has no silence symbol")]
    MissingSilence,
    #[error("duplicate symbol {symbol:?} (line {line})")]
    Duplicate { symbol: String, line: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhoneInventory {
    phones: Vec<String>,
    silence: String,
    /// raw symbol -> inventory symbol, identity entries omitted
    archi_map: BTreeMap<String, String>,
}

impl PhoneInventory {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, InventoryError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| InventoryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// The shipped 31-phone French inventory.
    pub fn french() -> Self {
        Self::parse(DEFAULT_INVENTORY).expect("shipped inventory is valid")
    }

    pub fn parse(text: &str) -> Result<Self, InventoryError> {
        let mut phones: Vec<String> = Vec::new();
        let mut silence: Option<String> = None;
        let mut merges: Vec<(usize, String, Vec<String>)> = Vec::new();
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();

        let mut claim = |symbol: &str, line: usize| -> Result<(), InventoryError> {
            if seen.insert(symbol.to_string(), line).is_some() {
                return Err(InventoryError::Duplicate {
                    symbol: symbol.to_string(),
                    line,
                });
            }
            Ok(())
        };

        for (i, raw_line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let keyword = fields.next().unwrap_or_default();
            let args: Vec<&str> = fields.collect();
            match keyword {
                "phone" => {
                    if args.is_empty() {
                        return Err(parse_err(line_no, "`phone` needs at least one symbol"));
                    }
                    for sym in args {
                        claim(sym, line_no)?;
                        phones.push(sym.to_string());
                    }
                }
                "silence" => {
                    if args.len() != 1 {
                        return Err(parse_err(line_no, "`silence` takes exactly one symbol"));
                    }
                    if silence.is_some() {
                        return Err(parse_err(line_no, "silence declared twice"));
                    }
                    claim(args[0], line_no)?;
                    silence = Some(args[0].to_string());
                }
                "merge" => {
                    if args.len() < 2 {
                        return Err(parse_err(line_no, "`merge` needs a target and raw symbols"));
                    }
                    merges.push((
                        line_no,
                        args[0].to_string(),
                        args[1..].iter().map(|s| s.to_string()).collect(),
                    ));
                }
                other => {
                    return Err(parse_err(line_no, &format!("unknown directive {other:?}")));
                }
            }
        }

        let silence = silence.ok_or(InventoryError::MissingSilence)?;
        if phones.len() != NUM_PHONES {
            return Err(InventoryError::PhoneCount {
                found: phones.len(),
            });
        }

        let mut archi_map = BTreeMap::new();
        for (line, target, raws) in merges {
            if !phones.contains(&target) {
                return Err(parse_err(
                    line,
                    &format!("merge target {target:?} is not an inventory phone"),
                ));
            }
            for raw in raws {
                // raw symbols must not shadow inventory symbols or another merge
                claim(&raw, line)?;
                archi_map.insert(raw, target.clone());
            }
        }

        Ok(Self {
            phones,
            silence,
            archi_map,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.phones.len() + 1
    }

    pub fn phones(&self) -> &[String] {
        &self.phones
    }

    pub fn silence_symbol(&self) -> &str {
        &self.silence
    }

    pub fn silence_index(&self) -> usize {
        self.phones.len()
    }

    pub fn archi_map(&self) -> &BTreeMap<String, String> {
        &self.archi_map
    }

    /// Folds a raw symbol onto its inventory symbol; unknown symbols pass through.
    pub fn merge<'a>(&'a self, raw: &'a str) -> &'a str {
        self.archi_map.get(raw).map(String::as_str).unwrap_or(raw)
    }

    /// Class index of a raw or inventory symbol.
    pub fn lookup(&self, raw: &str) -> Option<usize> {
        let symbol = self.merge(raw);
        if symbol == self.silence {
            return Some(self.silence_index());
        }
        self.phones.iter().position(|p| p == symbol)
    }

    pub fn symbol(&self, index: usize) -> Option<&str> {
        if index == self.silence_index() {
            Some(&self.silence)
        } else {
            self.phones.get(index).map(String::as_str)
        }
    }

    /// All class symbols in index order (phones, then silence).
    pub fn labels(&self) -> Vec<String> {
        let mut labels = self.phones.clone();
        labels.push(self.silence.clone());
        labels
    }

    /// Hex SHA-256 over a canonical rendering; embedded in checkpoints.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for p in &self.phones {
            hasher.update(p.as_bytes());
            hasher.update([0u8]);
        }
        hasher.update(b"|sil|");
        hasher.update(self.silence.as_bytes());
        for (raw, target) in &self.archi_map {
            hasher.update(b"|");
            hasher.update(raw.as_bytes());
            hasher.update(b">");
            hasher.update(target.as_bytes());
        }
        format!("{:x}", hasher.finalize())
    }
}

fn parse_err(line: usize, message: &str) -> InventoryError {
    InventoryError::Parse {
        line,
        message: message.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_inventory_has_32_classes() {
        let inv = PhoneInventory::french();
        assert_eq!(inv.num_classes(), NUM_CLASSES);
        assert_eq!(inv.phones().len(), 31);
        assert_eq!(inv.silence_index(), 31);
        assert_eq!(inv.lookup("sil"), Some(31));
    }

    #[test]
    fn archi_phones_collapse() {
        let inv = PhoneInventory::french();
        let e = inv.lookup("Ê").unwrap();
        assert_eq!(inv.lookup("e"), Some(e));
        assert_eq!(inv.lookup("ɛ"), Some(e));
        assert_eq!(inv.lookup("œ"), inv.lookup("Û"));
        assert_eq!(inv.lookup("ø"), inv.lookup("Û"));
        assert_eq!(inv.lookup("o"), inv.lookup("Ô"));
        assert_eq!(inv.lookup("ɔ"), inv.lookup("Ô"));
        assert_eq!(inv.lookup("œ\u{303}"), inv.lookup("µ"));
        assert_eq!(inv.lookup("ɛ\u{303}"), inv.lookup("µ"));
        assert_eq!(inv.merge("ɛ"), "Ê");
    }

    #[test]
    fn indices_are_contiguous() {
        let inv = PhoneInventory::french();
        for i in 0..NUM_CLASSES {
            let sym = inv.symbol(i).unwrap();
            assert_eq!(inv.lookup(sym), Some(i));
        }
        assert!(inv.symbol(32).is_none());
    }

    #[test]
    fn thirty_phones_rejected() {
        let text = DEFAULT_INVENTORY.replace("phone l ʁ", "phone l");
        match PhoneInventory::parse(&text) {
            Err(InventoryError::PhoneCount { found: 30 }) => {}
            other => panic!("expected count error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_symbol_rejected() {
        let text = DEFAULT_INVENTORY.replace("phone l ʁ", "phone l ʁ\nphone a");
        assert!(matches!(
            PhoneInventory::parse(&text),
            Err(InventoryError::Duplicate { .. })
        ));
    }

    #[test]
    fn malformed_line_names_line() {
        let text = "phone a\nbogus x\n";
        match PhoneInventory::parse(text) {
            Err(InventoryError::Parse { line: 2, .. }) => {}
            other => panic!("expected parse error on line 2, got {other:?}"),
        }
    }

    #[test]
    fn merge_onto_unknown_target_rejected() {
        let text = DEFAULT_INVENTORY.replace("merge Ê e ɛ", "merge X e ɛ");
        assert!(matches!(
            PhoneInventory::parse(&text),
            Err(InventoryError::Parse { .. })
        ));
    }

    #[test]
    fn hash_is_stable_and_content_sensitive() {
        let a = PhoneInventory::french();
        let b = PhoneInventory::french();
        assert_eq!(a.content_hash(), b.content_hash());
        let c = PhoneInventory::parse(&DEFAULT_INVENTORY.replace("merge Ô o ɔ", "merge Ô o")).unwrap();
        assert_ne!(a.content_hash(), c.content_hash());
    }

    proptest! {
        #[test]
        fn merge_is_idempotent(idx in 0usize..64, junk in "[a-z]{1,3}") {
            let inv = PhoneInventory::french();
            let mut symbols: Vec<String> = inv.labels();
            symbols.extend(inv.archi_map().keys().cloned());
            symbols.push(junk);
            let s = &symbols[idx % symbols.len()];
            let once = inv.merge(s).to_string();
            prop_assert_eq!(inv.merge(&once), once.as_str());
        }
    }
}
