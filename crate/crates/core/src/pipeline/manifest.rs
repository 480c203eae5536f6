use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{PipelineError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Laterality {
    L,
    R,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum View {
    CC,
    MLO,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Density {
    A,
    B,
    C,
    D,
    NR,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Finding {
    Mass,
    Calcification,
    Asymmetry,
    Distortion,
    None,
}

impl Finding {
    pub const LESIONS: [Finding; 4] = [Finding::Calcification, Finding::Mass, Finding::Asymmetry, Finding::Distortion];

    pub fn as_str(self) -> &'static str {
        match self {
            Finding::Mass => "mass",
            Finding::Calcification => "calcification",
            Finding::Asymmetry => "asymmetry",
            Finding::Distortion => "distortion",
            Finding::None => "none",
        }
    }
}

impl FromStr for Finding {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mass" => Ok(Finding::Mass),
            "calcification" => Ok(Finding::Calcification),
            "asymmetry" => Ok(Finding::Asymmetry),
            "distortion" => Ok(Finding::Distortion),
            "none" => Ok(Finding::None),
            _ => Err(PipelineError::Parse(format!("unknown finding '{s}'"))),
        }
    }
}

/// BI-RADS assessment, 0 to 6, with an optional 4A/4B/4C subcategory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Birads {
    category: u8,
    sub: Option<char>,
}

impl Birads {
    pub fn new(category: u8, sub: Option<char>) -> Result<Self> {
        if category > 6 {
            return Err(PipelineError::Birads(format!("category {category} outside 0..6")));
        }
        if let Some(c) = sub {
            if category != 4 || !matches!(c, 'A' | 'B' | 'C') {
                return Err(PipelineError::Birads(format!("invalid subcategory {category}{c}")));
            }
        }
        Ok(Birads { category, sub })
    }

    pub fn category(self) -> u8 {
        self.category
    }

    pub fn subcategory(self) -> Option<char> {
        self.sub
    }
}

impl fmt::Display for Birads {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.category)?;
        if let Some(c) = self.sub {
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl FromStr for Birads {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let mut chars = s.chars();
        let cat = chars
            .next()
            .and_then(|c| c.to_digit(10))
            .ok_or_else(|| PipelineError::Birads(format!("cannot parse '{s}'")))?;
        let rest: String = chars.collect();
        let sub = match rest.as_str() {
            "" => None,
            r if r.len() == 1 => r.chars().next().map(|c| c.to_ascii_uppercase()),
            _ => return Err(PipelineError::Birads(format!("cannot parse '{s}'"))),
        };
        Birads::new(cat as u8, sub)
    }
}

impl Serialize for Birads {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.sub {
            None => s.serialize_u8(self.category),
            Some(_) => s.serialize_str(&self.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for Birads {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Str(String),
        }
        let parsed = match Raw::deserialize(d)? {
            Raw::Int(i) if (0..=6).contains(&i) => Birads::new(i as u8, None),
            Raw::Int(i) => Err(PipelineError::Birads(format!("category {i} outside 0..6"))),
            Raw::Str(s) => s.parse(),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TriageLabel {
    Negative,
    Positive,
    Excluded,
}

impl TriageLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            TriageLabel::Negative => "negative",
            TriageLabel::Positive => "positive",
            TriageLabel::Excluded => "excluded",
        }
    }

    /// `Some(true)` for positive, `None` for excluded.
    pub fn as_bool(self) -> Option<bool> {
        match self {
            TriageLabel::Negative => Some(false),
            TriageLabel::Positive => Some(true),
            TriageLabel::Excluded => None,
        }
    }
}

impl FromStr for TriageLabel {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "negative" => Ok(TriageLabel::Negative),
            "positive" => Ok(TriageLabel::Positive),
            "excluded" => Ok(TriageLabel::Excluded),
            _ => Err(PipelineError::Parse(format!("unknown label '{s}'"))),
        }
    }
}

/// 1-3 negative, 4-6 positive (subcategories included), 0 excluded.
pub fn map_birads_to_label(birads: Birads) -> TriageLabel {
    match birads.category {
        0 => TriageLabel::Excluded,
        1..=3 => TriageLabel::Negative,
        _ => TriageLabel::Positive,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensityGroup {
    NonDense,
    Dense,
    #[serde(rename = "NR")]
    NR,
}

pub fn density_group(density: Density) -> DensityGroup {
    match density {
        Density::A | Density::B => DensityGroup::NonDense,
        Density::C | Density::D => DensityGroup::Dense,
        Density::NR => DensityGroup::NR,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub patient_id: String,
    pub study_id: String,
    pub laterality: Laterality,
    pub view: View,
    pub birads: Birads,
    pub density: Density,
    #[serde(default)]
    pub findings: Vec<Finding>,
    pub image_path: String,
    /// Fields this version does not know about, written back unchanged.
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

pub type ViewKey = (String, String, Laterality, View);

impl CaseRecord {
    pub fn key(&self) -> ViewKey {
        (self.patient_id.clone(), self.study_id.clone(), self.laterality, self.view)
    }

    pub fn label(&self) -> TriageLabel {
        map_birads_to_label(self.birads)
    }
}

pub fn parse_manifest(reader: impl BufRead) -> Result<Vec<CaseRecord>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CaseRecord = serde_json::from_str(&line)
            .map_err(|e| PipelineError::Manifest { line: i + 1, message: e.to_string() })?;
        if !seen.insert(rec.key()) {
            return Err(PipelineError::Manifest {
                line: i + 1,
                message: format!(
                    "duplicate view {}/{}/{:?}/{:?}",
                    rec.patient_id, rec.study_id, rec.laterality, rec.view
                ),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<CaseRecord>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| PipelineError::Io { path: path.display().to_string(), source: e })?;
    parse_manifest(std::io::BufReader::new(f))
}

pub fn write_manifest(records: &[CaseRecord], mut w: impl Write) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| PipelineError::Parse(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_manifest(records: &[CaseRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| PipelineError::Io { path: path.display().to_string(), source: e })?;
    let mut w = std::io::BufWriter::new(f);
    write_manifest(records, &mut w)?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<CaseRecord>,
    pub val: Vec<CaseRecord>,
    pub test: Vec<CaseRecord>,
}

/// Largest-remainder apportionment of `n` items over `ratios`; ties in the
/// remainder go to the earlier partition.
pub fn apportion(n: usize, ratios: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|x| (x + 1e-9).floor() as usize).collect();
    let mut left = n.saturating_sub(counts.iter().sum());
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - counts[a] as f64;
        let fb = raw[b] - counts[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Patient-level train/val/test split. Patients are sorted, shuffled with the
/// seed, then cut by largest-remainder counts; records keep manifest order.
pub fn split_patients(records: &[CaseRecord], ratios: [f64; 3], seed: u64) -> Result<Split> {
    if records.is_empty() {
        return Err(PipelineError::EmptyManifest);
    }
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(PipelineError::Config(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let mut patients: Vec<&str> = records.iter().map(|r| r.patient_id.as_str()).collect::<BTreeSet<_>>().into_iter().collect();
    patients.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let counts = apportion(patients.len(), &ratios);
    let mut part: BTreeMap<&str, usize> = BTreeMap::new();
    let mut start = 0;
    for (k, &c) in counts.iter().enumerate() {
        for p in &patients[start..start + c] {
            part.insert(p, k);
        }
        start += c;
    }
    let mut split = Split { train: Vec::new(), val: Vec::new(), test: Vec::new() };
    for r in records {
        match part[r.patient_id.as_str()] {
            0 => split.train.push(r.clone()),
            1 => split.val.push(r.clone()),
            _ => split.test.push(r.clone()),
        }
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(patient: &str, lat: Laterality, view: View, birads: u8) -> CaseRecord {
        CaseRecord {
            patient_id: patient.into(),
            study_id: "s1".into(),
            laterality: lat,
            view,
            birads: Birads::new(birads, None).unwrap(),
            density: Density::B,
            findings: vec![],
            image_path: format!("{patient}_{lat:?}_{view:?}.png"),
            extra: Default::default(),
        }
    }

    #[test]
    fn birads_mapping() {
        let b = |s: &str| map_birads_to_label(s.parse().unwrap());
        assert_eq!(b("2"), TriageLabel::Negative);
        assert_eq!(b("3"), TriageLabel::Negative);
        assert_eq!(b("4A"), TriageLabel::Positive);
        assert_eq!(b("6"), TriageLabel::Positive);
        assert_eq!(b("0"), TriageLabel::Excluded);
        assert!("7".parse::<Birads>().is_err());
        assert!("3A".parse::<Birads>().is_err());
        assert!("4D".parse::<Birads>().is_err());
    }

    #[test]
    fn density_groups() {
        assert_eq!(density_group(Density::B), DensityGroup::NonDense);
        assert_eq!(density_group(Density::C), DensityGroup::Dense);
        assert_eq!(density_group(Density::NR), DensityGroup::NR);
    }

    #[test]
    fn manifest_round_trip_keeps_unknown_fields() {
        let line = r#"{"patient_id":"p1","study_id":"s","laterality":"L","view":"CC","birads":"4B","density":"C","findings":["mass","calcification"],"image_path":"a.png","site":"x","age":54}"#;
        let recs = parse_manifest(line.as_bytes()).unwrap();
        assert_eq!(recs[0].birads.to_string(), "4B");
        assert_eq!(recs[0].extra["age"], 54);
        let mut out = Vec::new();
        write_manifest(&recs, &mut out).unwrap();
        let again = parse_manifest(out.as_slice()).unwrap();
        assert_eq!(recs, again);
        let int = line.replace(r#""4B""#, "2");
        assert_eq!(parse_manifest(int.as_bytes()).unwrap()[0].birads.category(), 2);
    }

    #[test]
    fn manifest_rejects_duplicates_and_bad_birads() {
        let line = r#"{"patient_id":"p1","study_id":"s","laterality":"L","view":"CC","birads":2,"density":"C","image_path":"a.png"}"#;
        let two = format!("{line}\n{line}\n");
        assert!(matches!(parse_manifest(two.as_bytes()), Err(PipelineError::Manifest { line: 2, .. })));
        let bad = line.replace("\"birads\":2", "\"birads\":9");
        assert!(matches!(parse_manifest(bad.as_bytes()), Err(PipelineError::Manifest { line: 1, .. })));
    }

    #[test]
    fn ten_patients_split_8_1_1() {
        let recs: Vec<_> = (0..10)
            .flat_map(|p| {
                [(Laterality::L, View::CC), (Laterality::L, View::MLO), (Laterality::R, View::CC), (Laterality::R, View::MLO)]
                    .map(|(l, v)| record(&format!("p{p}"), l, v, 2))
            })
            .collect();
        let s = split_patients(&recs, [0.8, 0.1, 0.1], 3).unwrap();
        let pats = |v: &[CaseRecord]| v.iter().map(|r| r.patient_id.clone()).collect::<BTreeSet<_>>();
        assert_eq!((pats(&s.train).len(), pats(&s.val).len(), pats(&s.test).len()), (8, 1, 1));
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (32, 4, 4));
        assert_eq!(s, split_patients(&recs, [0.8, 0.1, 0.1], 3).unwrap());
        assert!(split_patients(&[], [0.8, 0.1, 0.1], 3).is_err());
        assert!(split_patients(&recs, [0.8, 0.1, 0.2], 3).is_err());
    }

    proptest! {
        #[test]
        fn apportion_sums_to_n(n in 0usize..500, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (a, b) = if a + b > 1.0 { (a / 2.0, b / 2.0) } else { (a, b) };
            let c = apportion(n, &[a, b, 1.0 - a - b]);
            prop_assert_eq!(c.iter().sum::<usize>(), n);
        }

        #[test]
        fn no_patient_in_two_partitions(views in prop::collection::vec((0u8..30, 0u8..4), 1..120), seed in any::<u64>()) {
            let mut seen = HashSet::new();
            let recs: Vec<_> = views
                .into_iter()
                .filter(|k| seen.insert(*k))
                .map(|(p, v)| {
                    let lat = if v < 2 { Laterality::L } else { Laterality::R };
                    let view = if v % 2 == 0 { View::CC } else { View::MLO };
                    record(&format!("p{p}"), lat, view, 2)
                })
                .collect();
            let s = split_patients(&recs, [0.7, 0.15, 0.15], seed).unwrap();
            let pats = |v: &[CaseRecord]| v.iter().map(|r| r.patient_id.clone()).collect::<BTreeSet<_>>();
            let (a, b, c) = (pats(&s.train), pats(&s.val), pats(&s.test));
            prop_assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
            prop_assert_eq!(s.train.len() + s.val.len() + s.test.len(), recs.len());
        }
    }
}
