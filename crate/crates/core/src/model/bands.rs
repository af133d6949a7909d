//! Radiometer bands and the per-pixel measurement/science vectors.

use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub const N_BANDS: usize = 8;

/// One of the eight radiometer channels, in frozen instrument order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BandId {
    #[serde(rename = "Tb250+0.0")]
    Tb250P00,
    #[serde(rename = "Tb310+2.5")]
    Tb310P25,
    #[serde(rename = "Tb380-0.8")]
    Tb380M08,
    #[serde(rename = "Tb380-1.8")]
    Tb380M18,
    #[serde(rename = "Tb380-3.3")]
    Tb380M33,
    #[serde(rename = "Tb380-6.2")]
    Tb380M62,
    #[serde(rename = "Tb380-9.5")]
    Tb380M95,
    #[serde(rename = "Tb670+0.0")]
    Tb670P00,
}

impl BandId {
    pub const ALL: [BandId; N_BANDS] = [
        BandId::Tb250P00,
        BandId::Tb310P25,
        BandId::Tb380M08,
        BandId::Tb380M18,
        BandId::Tb380M33,
        BandId::Tb380M62,
        BandId::Tb380M95,
        BandId::Tb670P00,
    ];

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn from_ordinal(i: usize) -> Option<BandId> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            BandId::Tb250P00 => "Tb250+0.0",
            BandId::Tb310P25 => "Tb310+2.5",
            BandId::Tb380M08 => "Tb380-0.8",
            BandId::Tb380M18 => "Tb380-1.8",
            BandId::Tb380M33 => "Tb380-3.3",
            BandId::Tb380M62 => "Tb380-6.2",
            BandId::Tb380M95 => "Tb380-9.5",
            BandId::Tb670P00 => "Tb670+0.0",
        }
    }

    /// Column name used in pixel CSV files.
    pub fn csv_column(self) -> &'static str {
        match self {
            BandId::Tb250P00 => "tb250_00",
            BandId::Tb310P25 => "tb310_p25",
            BandId::Tb380M08 => "tb380_m08",
            BandId::Tb380M18 => "tb380_m18",
            BandId::Tb380M33 => "tb380_m33",
            BandId::Tb380M62 => "tb380_m62",
            BandId::Tb380M95 => "tb380_m95",
            BandId::Tb670P00 => "tb670_00",
        }
    }

    pub fn is_tb380(self) -> bool {
        self.name().starts_with("Tb380")
    }

    /// Names of all bands in instrument order; stored in every model file.
    pub fn order_names() -> Vec<String> {
        Self::ALL.iter().map(|b| b.name().to_string()).collect()
    }
}

impl fmt::Display for BandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BandId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|b| b.name() == s || b.csv_column() == s)
            .ok_or_else(|| format!("unknown band `{s}`"))
    }
}

/// Brightness temperatures in kelvin, indexed by [`BandId`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RadianceVector(pub [f64; N_BANDS]);

impl RadianceVector {
    pub fn new(tb: [f64; N_BANDS]) -> Self {
        RadianceVector(tb)
    }

    pub fn as_array(&self) -> &[f64; N_BANDS] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Index<BandId> for RadianceVector {
    type Output = f64;

    fn index(&self, band: BandId) -> &f64 {
        &self.0[band.ordinal()]
    }
}

impl IndexMut<BandId> for RadianceVector {
    fn index_mut(&mut self, band: BandId) -> &mut f64 {
        &mut self.0[band.ordinal()]
    }
}

/// Hidden science variables used only for label generation.
///
/// Ice water path is treated as a unitless nonnegative magnitude; particle
/// size is in micrometers and cloud-top height in meters. Clear sky is the
/// all-zero vector.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScienceVector {
    pub iwp: f64,
    pub particle_size: f64,
    pub cloud_top_height: f64,
}

impl ScienceVector {
    pub const ZERO: ScienceVector = ScienceVector { iwp: 0.0, particle_size: 0.0, cloud_top_height: 0.0 };

    pub fn new(iwp: f64, particle_size: f64, cloud_top_height: f64) -> Self {
        ScienceVector { iwp, particle_size, cloud_top_height }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.iwp, self.particle_size, self.cloud_top_height]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        ScienceVector::new(a[0], a[1], a[2])
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite() && *v >= 0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.iwp == 0.0 && self.particle_size == 0.0 && self.cloud_top_height == 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_bands_in_fixed_order() {
        let names: Vec<_> = BandId::ALL.iter().map(|b| b.name()).collect();
        assert_eq!(
            names,
            ["Tb250+0.0", "Tb310+2.5", "Tb380-0.8", "Tb380-1.8", "Tb380-3.3", "Tb380-6.2", "Tb380-9.5", "Tb670+0.0"]
        );
        for (i, b) in BandId::ALL.iter().enumerate() {
            assert_eq!(b.ordinal(), i);
            assert_eq!(BandId::from_ordinal(i), Some(*b));
        }
    }

    #[test]
    fn tb380_predicate() {
        let tb380: Vec<_> = BandId::ALL.iter().filter(|b| b.is_tb380()).collect();
        assert_eq!(tb380.len(), 5);
        assert!(!BandId::Tb250P00.is_tb380());
        assert!(!BandId::Tb310P25.is_tb380());
        assert!(!BandId::Tb670P00.is_tb380());
    }

    #[test]
    fn band_names_parse_and_serialize() {
        for b in BandId::ALL {
            assert_eq!(b.name().parse::<BandId>().unwrap(), b);
            assert_eq!(b.csv_column().parse::<BandId>().unwrap(), b);
            let json = serde_json::to_string(&b).unwrap();
            assert_eq!(json, format!("\"{}\"", b.name()));
        }
        assert!("Tb999".parse::<BandId>().is_err());
    }
}
