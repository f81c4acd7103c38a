//! Country lookup: continent and Global North / Global South bucket.
//!
//! The shipped table follows the UNCTAD developed/developing economy split:
//! developed economies (Europe, Northern America, Australia, Israel, Japan,
//! New Zealand, Republic of Korea) are `GN`, everything else `GS`.

use std::collections::HashMap;
use std::sync::OnceLock;

use serde::Deserialize;

use crate::dataset::GlobalBucket;

const REGIONS_CSV: &str = include_str!("../resources/regions.csv");

pub const CONTINENTS: [&str; 6] = [
    "Africa",
    "Asia",
    "Europe",
    "North America",
    "Oceania",
    "South America",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionInfo {
    pub country: String,
    pub continent: String,
    pub bucket: GlobalBucket,
}

#[derive(Debug, Deserialize)]
struct Row {
    country: String,
    continent: String,
    bucket: GlobalBucket,
    aliases: String,
}

#[derive(Debug)]
pub struct RegionTable {
    entries: Vec<RegionInfo>,
    by_key: HashMap<String, usize>,
}

fn key(s: &str) -> String {
    s.trim().to_lowercase()
}

impl RegionTable {
    /// The built-in table.
    pub fn builtin() -> &'static RegionTable {
        static TABLE: OnceLock<RegionTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            RegionTable::from_csv(REGIONS_CSV).expect("bundled regions.csv is well formed")
        })
    }

    pub fn from_csv(text: &str) -> Result<RegionTable, csv::Error> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let mut entries = Vec::new();
        let mut by_key = HashMap::new();
        for row in rdr.deserialize::<Row>() {
            let row = row?;
            let idx = entries.len();
            by_key.insert(key(&row.country), idx);
            for alias in row.aliases.split('|').filter(|a| !a.trim().is_empty()) {
                by_key.insert(key(alias), idx);
            }
            entries.push(RegionInfo {
                country: row.country,
                continent: row.continent,
                bucket: row.bucket,
            });
        }
        Ok(RegionTable { entries, by_key })
    }

    pub fn lookup(&self, country: &str) -> Option<&RegionInfo> {
        self.by_key.get(&key(country)).map(|&i| &self.entries[i])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &RegionInfo> {
        self.entries.iter()
    }
}

pub fn is_known_continent(name: &str) -> bool {
    CONTINENTS.iter().any(|c| c.eq_ignore_ascii_case(name.trim()))
}
