//! Cloud-type taxonomies and the 5 → 3 → 2 collapse maps.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Five cloud types, ordered by storm intensity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CloudClass5 {
    ClearSky,
    ThinCirrus,
    Cirrus,
    RainyAnvil,
    ConvectionCore,
}

impl CloudClass5 {
    pub const COUNT: usize = 5;
    pub const ALL: [CloudClass5; 5] = [
        CloudClass5::ClearSky,
        CloudClass5::ThinCirrus,
        CloudClass5::Cirrus,
        CloudClass5::RainyAnvil,
        CloudClass5::ConvectionCore,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<CloudClass5> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            CloudClass5::ClearSky => "ClearSky",
            CloudClass5::ThinCirrus => "ThinCirrus",
            CloudClass5::Cirrus => "Cirrus",
            CloudClass5::RainyAnvil => "RainyAnvil",
            CloudClass5::ConvectionCore => "ConvectionCore",
        }
    }

    pub fn names() -> Vec<String> {
        Self::ALL.iter().map(|c| c.name().to_string()).collect()
    }

    pub fn is_storm(self) -> bool {
        matches!(self, CloudClass5::RainyAnvil | CloudClass5::ConvectionCore)
    }
}

impl fmt::Display for CloudClass5 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CloudClass5 {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown cloud class `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CloudClass3 {
    NonStorm,
    RainyAnvil,
    ConvectionCore,
}

impl CloudClass3 {
    pub const ALL: [CloudClass3; 3] = [CloudClass3::NonStorm, CloudClass3::RainyAnvil, CloudClass3::ConvectionCore];

    pub fn name(self) -> &'static str {
        match self {
            CloudClass3::NonStorm => "NonStorm",
            CloudClass3::RainyAnvil => "RainyAnvil",
            CloudClass3::ConvectionCore => "ConvectionCore",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CloudClass2 {
    NonStorm,
    Storm,
}

impl CloudClass2 {
    pub const ALL: [CloudClass2; 2] = [CloudClass2::NonStorm, CloudClass2::Storm];

    pub fn name(self) -> &'static str {
        match self {
            CloudClass2::NonStorm => "NonStorm",
            CloudClass2::Storm => "Storm",
        }
    }
}

pub fn collapse5to3(label: CloudClass5) -> CloudClass3 {
    match label {
        CloudClass5::ClearSky | CloudClass5::ThinCirrus | CloudClass5::Cirrus => CloudClass3::NonStorm,
        CloudClass5::RainyAnvil => CloudClass3::RainyAnvil,
        CloudClass5::ConvectionCore => CloudClass3::ConvectionCore,
    }
}

pub fn collapse3to2(label: CloudClass3) -> CloudClass2 {
    match label {
        CloudClass3::NonStorm => CloudClass2::NonStorm,
        CloudClass3::RainyAnvil | CloudClass3::ConvectionCore => CloudClass2::Storm,
    }
}

pub fn collapse5to2(label: CloudClass5) -> CloudClass2 {
    collapse3to2(collapse5to3(label))
}

/// Argmax over per-class scores; exact ties go to the stronger storm class.
///
/// NaN scores never win.
pub fn argmax_prefer_storm(scores: &[f64; CloudClass5::COUNT]) -> CloudClass5 {
    let mut best = None;
    let mut best_score = f64::NEG_INFINITY;
    for (i, &s) in scores.iter().enumerate() {
        if s >= best_score {
            best_score = s;
            best = Some(i);
        }
    }
    best.and_then(CloudClass5::from_index).unwrap_or(CloudClass5::ConvectionCore)
}

/// A surjection between named class sets, used to coarsen confusion matrices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMapping {
    targets: Vec<String>,
    assign: BTreeMap<String, String>,
}

impl ClassMapping {
    pub fn new<S: Into<String>>(targets: impl IntoIterator<Item = S>, pairs: impl IntoIterator<Item = (S, S)>) -> Result<Self> {
        let targets: Vec<String> = targets.into_iter().map(Into::into).collect();
        let mut assign = BTreeMap::new();
        for (from, to) in pairs {
            let (from, to) = (from.into(), to.into());
            if !targets.contains(&to) {
                return Err(Error::InvalidMapping(format!("`{from}` maps to `{to}`, which is not a target class")));
            }
            assign.insert(from, to);
        }
        for t in &targets {
            if !assign.values().any(|v| v == t) {
                return Err(Error::InvalidMapping(format!("target class `{t}` has an empty preimage")));
            }
        }
        Ok(ClassMapping { targets, assign })
    }

    pub fn five_to_three() -> Self {
        let pairs = CloudClass5::ALL.map(|c| (c.name(), collapse5to3(c).name()));
        Self::new(CloudClass3::ALL.map(|c| c.name()), pairs).expect("static mapping")
    }

    pub fn three_to_two() -> Self {
        let pairs = CloudClass3::ALL.map(|c| (c.name(), collapse3to2(c).name()));
        Self::new(CloudClass2::ALL.map(|c| c.name()), pairs).expect("static mapping")
    }

    pub fn five_to_two() -> Self {
        let pairs = CloudClass5::ALL.map(|c| (c.name(), collapse5to2(c).name()));
        Self::new(CloudClass2::ALL.map(|c| c.name()), pairs).expect("static mapping")
    }

    pub fn targets(&self) -> &[String] {
        &self.targets
    }

    pub fn get(&self, class: &str) -> Option<&str> {
        self.assign.get(class).map(String::as_str)
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &ClassMapping) -> Result<ClassMapping> {
        let mut pairs = Vec::with_capacity(self.assign.len());
        for (from, mid) in &self.assign {
            let to = next
                .get(mid)
                .ok_or_else(|| Error::InvalidMapping(format!("`{mid}` is not covered by the second mapping")))?;
            pairs.push((from.clone(), to.to_string()));
        }
        ClassMapping::new(next.targets.clone(), pairs)
    }
}
