//! On-disk formats: point CSVs, triangulation text files, 16-bit images,
//! cohort tables and the `SAMM0001` model container.
//!
//! All readers are pure functions of the file contents. They reject every
//! input outside their contract instead of repairing it.

mod cohort;
mod container;
mod image;
mod mesh;
mod points;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cohort::{read_cohort, write_cohort, CohortRow, CohortTable};
pub use container::{read_model, write_model, ContainerBlocks, ModelKind, SavedModel};
pub use image::{read_image, read_image_upsampled, upsample_bicubic, write_pgm, write_png, ScanImage};
pub use mesh::{read_triangulation, write_triangulation, Triangulation, EPS_AREA};
pub use points::{read_point_file, write_point_file, PointSet};

/// Tissue-specific image channel of a scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImagingMode {
    DFat,
    BmdIrs,
    RAir,
    DLean,
    MBoneIrs,
}

impl ImagingMode {
    pub const ALL: [ImagingMode; 5] = [
        ImagingMode::DFat,
        ImagingMode::BmdIrs,
        ImagingMode::RAir,
        ImagingMode::DLean,
        ImagingMode::MBoneIrs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ImagingMode::DFat => "d_fat",
            ImagingMode::BmdIrs => "bmd_irs",
            ImagingMode::RAir => "r_air",
            ImagingMode::DLean => "d_lean",
            ImagingMode::MBoneIrs => "m_bone_irs",
        }
    }

    /// Modes for which texture and appearance models may be built.
    /// `r_air` only carries shape displays.
    pub fn supports_texture(self) -> bool {
        self != ImagingMode::RAir
    }

    pub(crate) fn valid_list() -> String {
        Self::ALL.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for ImagingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ImagingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown mode {s:?}; valid modes: {}", Self::valid_list())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sex {
    F,
    M,
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::F => "F",
            Sex::M => "M",
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "F" => Ok(Sex::F),
            "M" => Ok(Sex::M),
            other => Err(Error::invalid(format!("invalid sex {other:?}"))),
        }
    }
}

/// Splits text into lines accepting both `\n` and `\r\n` endings.
pub(crate) fn text_lines(text: &str) -> impl Iterator<Item = &str> {
    text.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_names_round_trip() {
        for mode in ImagingMode::ALL {
            assert_eq!(mode.as_str().parse::<ImagingMode>().unwrap(), mode);
        }
        let err = "xray".parse::<ImagingMode>().unwrap_err().to_string();
        assert!(err.contains("unknown mode"));
        assert!(err.contains("m_bone_irs"));
    }

    #[test]
    fn sex_parsing() {
        assert_eq!("F".parse::<Sex>().unwrap(), Sex::F);
        assert!("X".parse::<Sex>().unwrap_err().to_string().contains("invalid sex"));
    }
}
