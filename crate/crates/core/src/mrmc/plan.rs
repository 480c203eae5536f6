use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{MrmcError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Junior,
    Intermediate,
    Senior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    GrayscaleOnly,
    TdceOnly,
    SideBySide,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::GrayscaleOnly, Condition::TdceOnly, Condition::SideBySide];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::GrayscaleOnly => "grayscale-only",
            Condition::TdceOnly => "tdce-only",
            Condition::SideBySide => "side-by-side",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = MrmcError;

    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| MrmcError::Parse(format!("unknown condition '{s}'")))
    }
}

/// Session orders; each condition appears once per position.
pub const LATIN_SQUARE: [[Condition; 3]; 3] = [
    [Condition::GrayscaleOnly, Condition::TdceOnly, Condition::SideBySide],
    [Condition::TdceOnly, Condition::SideBySide, Condition::GrayscaleOnly],
    [Condition::SideBySide, Condition::GrayscaleOnly, Condition::TdceOnly],
];

pub const DEFAULT_WASHOUT_DAYS: u32 = 28;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reader {
    pub reader_id: String,
    pub tier: Tier,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionPlan {
    /// 1-based.
    pub session: u32,
    pub condition: Condition,
    pub case_order: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReaderPlan {
    pub reader_id: String,
    pub tier: Tier,
    /// Row of the Latin square.
    pub order_index: usize,
    pub sessions: Vec<SessionPlan>,
}

impl ReaderPlan {
    pub fn order(&self) -> Vec<Condition> {
        self.sessions.iter().map(|s| s.condition).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyPlan {
    pub seed: u64,
    pub washout_days: u32,
    pub conditions: [Condition; 3],
    pub cases: Vec<String>,
    pub readers: Vec<ReaderPlan>,
}

impl StudyPlan {
    pub fn reader(&self, id: &str) -> Option<&ReaderPlan> {
        self.readers.iter().find(|r| r.reader_id == id)
    }
}

/// Square rows are dealt round-robin over readers taken tier by tier, so with
/// two readers per tier every row gets two readers and each tier covers two
/// rows. Every (reader, session) case order is an independent seeded shuffle.
pub fn build_plan(readers: &[Reader], cases: &[String], seed: u64, washout_days: u32) -> Result<StudyPlan> {
    if readers.is_empty() || !readers.len().is_multiple_of(3) {
        return Err(MrmcError::ReaderCount { readers: readers.len(), remainder: readers.len() % 3 });
    }
    if cases.is_empty() {
        return Err(MrmcError::Invalid("case list is empty".into()));
    }
    let mut seen = HashSet::new();
    if let Some(r) = readers.iter().find(|r| !seen.insert(r.reader_id.as_str())) {
        return Err(MrmcError::Duplicate(format!("reader '{}'", r.reader_id)));
    }
    let mut seen = HashSet::new();
    if let Some(c) = cases.iter().find(|c| !seen.insert(c.as_str())) {
        return Err(MrmcError::Duplicate(format!("case '{c}'")));
    }
    let mut by_tier: Vec<(usize, &Reader)> = readers.iter().enumerate().collect();
    by_tier.sort_by_key(|(i, r)| (r.tier, *i));
    let mut order_of = vec![0; readers.len()];
    for (k, (i, _)) in by_tier.iter().enumerate() {
        order_of[*i] = k % 3;
    }
    let plans = readers
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let sessions = LATIN_SQUARE[order_of[i]]
                .iter()
                .enumerate()
                .map(|(s, &condition)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream((i * 3 + s) as u64);
                    let mut case_order = cases.to_vec();
                    case_order.shuffle(&mut rng);
                    SessionPlan { session: s as u32 + 1, condition, case_order }
                })
                .collect();
            ReaderPlan { reader_id: r.reader_id.clone(), tier: r.tier, order_index: order_of[i], sessions }
        })
        .collect();
    Ok(StudyPlan { seed, washout_days, conditions: Condition::ALL, cases: cases.to_vec(), readers: plans })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn readers(per_tier: usize) -> Vec<Reader> {
        [Tier::Junior, Tier::Intermediate, Tier::Senior]
            .into_iter()
            .flat_map(|t| (0..per_tier).map(move |i| Reader { reader_id: format!("{t:?}{i}"), tier: t }))
            .collect()
    }

    fn cases(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i:03}")).collect()
    }

    #[test]
    fn six_readers_two_per_order() {
        let plan = build_plan(&readers(2), &cases(100), 1, DEFAULT_WASHOUT_DAYS).unwrap();
        let mut uses = BTreeMap::new();
        for r in &plan.readers {
            *uses.entry(r.order_index).or_insert(0) += 1;
            assert_eq!(r.order(), LATIN_SQUARE[r.order_index].to_vec());
        }
        assert_eq!(uses.values().copied().collect::<Vec<_>>(), vec![2, 2, 2]);
        for t in [Tier::Junior, Tier::Intermediate, Tier::Senior] {
            let rows: HashSet<_> = plan.readers.iter().filter(|r| r.tier == t).map(|r| r.order_index).collect();
            assert_eq!(rows.len(), 2);
        }
        assert_eq!(plan, build_plan(&readers(2), &cases(100), 1, DEFAULT_WASHOUT_DAYS).unwrap());
    }

    #[test]
    fn case_orders_are_permutations_and_vary() {
        let cs = cases(100);
        let plan = build_plan(&readers(2), &cs, 5, DEFAULT_WASHOUT_DAYS).unwrap();
        let mut sorted = cs.clone();
        sorted.sort();
        let mut distinct = HashSet::new();
        for r in &plan.readers {
            for s in &r.sessions {
                let mut o = s.case_order.clone();
                distinct.insert(o.clone());
                o.sort();
                assert_eq!(o, sorted);
            }
        }
        assert_eq!(distinct.len(), 18);
        assert_eq!(plan.cases, cs);
    }

    #[test]
    fn latin_square_property() {
        for pos in 0..3 {
            let col: HashSet<_> = LATIN_SQUARE.iter().map(|row| row[pos]).collect();
            assert_eq!(col.len(), 3);
        }
    }

    #[test]
    fn invalid_inputs() {
        let r = readers(2);
        assert!(matches!(build_plan(&r[..5], &cases(4), 0, 28), Err(MrmcError::ReaderCount { remainder: 2, .. })));
        let mut dup = r.clone();
        dup[1].reader_id = dup[0].reader_id.clone();
        assert!(matches!(build_plan(&dup, &cases(4), 0, 28), Err(MrmcError::Duplicate(_))));
        let mut cs = cases(4);
        cs[3] = cs[0].clone();
        assert!(matches!(build_plan(&r, &cs, 0, 28), Err(MrmcError::Duplicate(_))));
        assert!(build_plan(&r, &[], 0, 28).is_err());
    }
}
