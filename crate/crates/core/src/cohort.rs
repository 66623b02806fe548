//! Cohort manifest entries.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::date::Day;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Pretrain,
    Positive,
    Control,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Pretrain => "pretrain",
            Role::Positive => "positive",
            Role::Control => "control",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub participant_id: String,
    pub site: String,
    pub gender: String,
    pub age_band: String,
    pub timezone_offset_minutes: i32,
    pub onset_date: Option<Day>,
    pub group: Role,
}

impl ManifestEntry {
    /// Attributes a control must share with its positive participant.
    pub fn matching_key(&self) -> (&str, &str, &str) {
        (&self.site, &self.gender, &self.age_band)
    }
}

pub type Manifest = Vec<ManifestEntry>;

/// Age bands used for matching.
pub const AGE_BANDS: [&str; 6] = ["<=30", "30-39", "40-49", "50-59", "60-69", ">=70"];

pub fn age_band(age: u32) -> &'static str {
    match age {
        0..=29 => AGE_BANDS[0],
        30..=39 => AGE_BANDS[1],
        40..=49 => AGE_BANDS[2],
        50..=59 => AGE_BANDS[3],
        60..=69 => AGE_BANDS[4],
        _ => AGE_BANDS[5],
    }
}
