use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cohort::{ManifestEntry, Role};
use crate::error::{Error, Result};
use crate::segment::{Provenance, SegmentSet};

/// One leave-one-pair-out round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    /// `(positive, matched control)`.
    pub held_out: (String, String),
    pub train_positives: Vec<String>,
    pub train_controls: Vec<String>,
    pub pretrain_ids: Vec<String>,
}

impl Fold {
    pub fn is_held_out(&self, id: &str) -> bool {
        self.held_out.0 == id || self.held_out.1 == id
    }
}

/// Pairs every positive with the first unused control sharing its site,
/// gender and age band (manifest order), then emits one fold per pair.
pub fn match_controls(manifest: &[ManifestEntry]) -> Result<Vec<(String, String)>> {
    let mut used = BTreeSet::new();
    let mut pairs = Vec::new();
    for p in manifest.iter().filter(|e| e.group == Role::Positive) {
        let c = manifest
            .iter()
            .filter(|e| e.group == Role::Control && !used.contains(e.participant_id.as_str()))
            .find(|e| e.matching_key() == p.matching_key())
            .ok_or_else(|| Error::MissingMatchedControl(p.participant_id.clone()))?;
        used.insert(c.participant_id.as_str());
        pairs.push((p.participant_id.clone(), c.participant_id.clone()));
    }
    Ok(pairs)
}

pub fn build_folds(manifest: &[ManifestEntry]) -> Result<Vec<Fold>> {
    let pairs = match_controls(manifest)?;
    let pretrain_ids: Vec<String> =
        manifest.iter().filter(|e| e.group == Role::Pretrain).map(|e| e.participant_id.clone()).collect();
    Ok(pairs
        .iter()
        .enumerate()
        .map(|(index, held)| Fold {
            index,
            held_out: held.clone(),
            train_positives: pairs.iter().filter(|p| *p != held).map(|p| p.0.clone()).collect(),
            train_controls: pairs.iter().filter(|p| *p != held).map(|p| p.1.clone()).collect(),
            pretrain_ids: pretrain_ids.clone(),
        })
        .collect())
}

/// Owners of training segments that belong to the held-out pair.
pub fn leakage<'a>(fold: &Fold, training_owners: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let bad: BTreeSet<&str> = training_owners.into_iter().filter(|id| fold.is_held_out(id)).collect();
    bad.into_iter().map(String::from).collect()
}

/// Fine-tuning and test sets of a fold from per-participant segments.
pub fn fold_sets(fold: &Fold, by_participant: &BTreeMap<String, SegmentSet>) -> Result<(SegmentSet, SegmentSet)> {
    let get = |id: &String| {
        by_participant.get(id).ok_or_else(|| Error::InvalidConfig(alloc::format!("no segments for participant {id}")))
    };
    let mut train = SegmentSet::new(Provenance::CvPositive);
    for id in fold.train_positives.iter().chain(&fold.train_controls) {
        train.extend(get(id)?.clone());
    }
    let mut test = get(&fold.held_out.0)?.clone();
    test.provenance = Provenance::CvPositive;
    test.extend(get(&fold.held_out.1)?.clone());
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;

    fn entry(id: &str, group: Role, site: &str) -> ManifestEntry {
        ManifestEntry {
            participant_id: id.into(),
            site: site.into(),
            gender: "F".into(),
            age_band: "40-49".into(),
            timezone_offset_minutes: 60,
            onset_date: None,
            group,
        }
    }

    #[test]
    fn pairs_by_attributes() {
        let m = [
            entry("p1", Role::Positive, "ITA"),
            entry("p2", Role::Positive, "ESP"),
            entry("c1", Role::Control, "ESP"),
            entry("c2", Role::Control, "ITA"),
            entry("x", Role::Pretrain, "ITA"),
        ];
        let folds = build_folds(&m).unwrap();
        assert_eq!(folds.len(), 2);
        assert_eq!(folds[0].held_out, ("p1".into(), "c2".into()));
        assert_eq!(folds[0].train_positives, ["p2"]);
        assert_eq!(folds[0].train_controls, ["c1"]);
        assert_eq!(folds[1].pretrain_ids, ["x"]);
        let bad = [entry("p1", Role::Positive, "ITA"), entry("c1", Role::Control, "DNK")];
        assert_eq!(build_folds(&bad), Err(Error::MissingMatchedControl("p1".into())));
    }

    #[test]
    fn nineteen_pairs() {
        let mut m = Vec::new();
        for i in 0..19 {
            m.push(entry(&format!("p{i}"), Role::Positive, "ITA"));
            m.push(entry(&format!("c{i}"), Role::Control, "ITA"));
        }
        let folds = build_folds(&m).unwrap();
        assert_eq!(folds.len(), 19);
        for f in &folds {
            assert_eq!((f.train_positives.len(), f.train_controls.len()), (18, 18));
            let owners = f.train_positives.iter().chain(&f.train_controls).map(String::as_str);
            assert!(leakage(f, owners).is_empty());
        }
        assert_eq!(leakage(&folds[0], ["p0", "c5", "c0"]), ["c0", "p0"]);
    }
}
