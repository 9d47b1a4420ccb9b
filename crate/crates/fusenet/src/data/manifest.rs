//! JSON dataset manifests: a bare array of studies, each pointing at three
//! MVOL files (paths relative to the manifest's directory) with the
//! acquisition metadata needed by the preprocessing pipeline.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::AcquisitionMeta;
use crate::volume::{Modality, Photometric, Volume};

/// Per-study acquisition metadata as stored in the manifest. `photometric`
/// is scanner metadata and therefore lives here rather than only in the
/// volume files; loading stamps it onto the CT volume.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StudyMeta {
    #[serde(flatten)]
    pub acquisition: AcquisitionMeta,
    pub photometric: Photometric,
}

/// One study entry: an id, three volume paths, and the class label
/// (0 or 1).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestStudy {
    pub id: String,
    pub ct_path: String,
    pub pet_path: String,
    pub mask_path: String,
    pub label: u8,
    pub meta: StudyMeta,
}

/// Reads and validates a manifest: labels must be 0 or 1 and ids unique.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestStudy>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let studies: Vec<ManifestStudy> =
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    let mut seen = HashSet::new();
    for s in &studies {
        if s.label > 1 {
            return Err(Error::Data(format!("study {}: label {} is not 0 or 1", s.id, s.label)));
        }
        if !seen.insert(s.id.as_str()) {
            return Err(Error::Data(format!("duplicate study id {:?}", s.id)));
        }
    }
    Ok(studies)
}

pub fn write_manifest(studies: &[ManifestStudy], path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(studies).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// A study with its volumes in memory, ready for preprocessing.
#[derive(Debug)]
pub struct RawStudy {
    pub id: String,
    pub label: u8,
    pub ct: Volume,
    pub pet: Volume,
    pub mask: Volume,
    pub meta: AcquisitionMeta,
}

fn expect_modality(v: Volume, want: Modality, path: &Path) -> Result<Volume> {
    if v.modality != want {
        return Err(Error::Data(format!(
            "{} holds a {:?} volume where {want:?} was expected",
            path.display(),
            v.modality
        )));
    }
    Ok(v)
}

/// Loads a study's three volumes, resolving paths against the manifest's
/// directory and stamping the manifest's photometric flag onto the CT.
pub fn load_study(manifest_dir: &Path, s: &ManifestStudy) -> Result<RawStudy> {
    let read = |rel: &str, want: Modality| -> Result<Volume> {
        let path: PathBuf = manifest_dir.join(rel);
        expect_modality(super::mvol::read_mvol(&path)?, want, &path)
    };
    let mut ct = read(&s.ct_path, Modality::Ct)?;
    ct.photometric = s.meta.photometric;
    let pet = read(&s.pet_path, Modality::Pet)?;
    let mask = read(&s.mask_path, Modality::Mask)?;
    Ok(RawStudy { id: s.id.clone(), label: s.label, ct, pet, mask, meta: s.meta.acquisition })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::mvol::write_mvol;

    fn meta_json() -> &'static str {
        r#"{"rescale_slope": 1.0, "rescale_intercept": -1024.0,
            "injected_dose_mbq": 350.0, "body_weight_kg": 70.0,
            "injection_to_scan_min": 60.0, "photometric": "standard"}"#
    }

    #[test]
    fn manifest_round_trip_and_flat_meta_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let text = format!(
            r#"[{{"id": "a", "ct_path": "a_ct.mvol", "pet_path": "a_pet.mvol",
                 "mask_path": "a_mask.mvol", "label": 1, "meta": {m}}}]"#,
            m = meta_json()
        );
        std::fs::write(&path, text).unwrap();
        let studies = read_manifest(&path).unwrap();
        assert_eq!(studies.len(), 1);
        assert_eq!(studies[0].label, 1);
        // Omitted half-life falls back to the FDG default.
        assert_eq!(studies[0].meta.acquisition.tracer_half_life_min, 109.77);

        write_manifest(&studies, &path).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back[0].id, studies[0].id);
        // The flattened meta keeps the manifest flat: no nested
        // "acquisition" object.
        let raw = std::fs::read_to_string(&path).unwrap();
        assert!(raw.contains("\"rescale_slope\""));
        assert!(!raw.contains("acquisition"));
    }

    #[test]
    fn bad_labels_and_duplicate_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let m = meta_json();
        let bad_label = format!(
            r#"[{{"id": "a", "ct_path": "c", "pet_path": "p", "mask_path": "m",
                 "label": 2, "meta": {m}}}]"#
        );
        std::fs::write(&path, bad_label).unwrap();
        assert!(matches!(read_manifest(&path), Err(Error::Data(_))));

        let dup = format!(
            r#"[{{"id": "a", "ct_path": "c", "pet_path": "p", "mask_path": "m",
                 "label": 0, "meta": {m}}},
                {{"id": "a", "ct_path": "c2", "pet_path": "p2", "mask_path": "m2",
                 "label": 1, "meta": {m}}}]"#
        );
        std::fs::write(&path, dup).unwrap();
        assert!(matches!(read_manifest(&path), Err(Error::Data(_))));
    }

    #[test]
    fn malformed_json_is_a_json_error_naming_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        std::fs::write(&path, "[{").unwrap();
        match read_manifest(&path) {
            Err(Error::Json { path: p, .. }) => assert!(p.ends_with("manifest.json")),
            other => panic!("expected json error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn load_study_resolves_paths_checks_modalities_and_stamps_photometric() {
        let dir = tempfile::tempdir().unwrap();
        let vol = |m: Modality| {
            Volume::new(vec![0.0; 8], [2, 2, 2], [1.0; 3], [0.0; 3], m, Photometric::Standard)
                .unwrap()
        };
        write_mvol(&vol(Modality::Ct), &dir.path().join("ct.mvol")).unwrap();
        write_mvol(&vol(Modality::Pet), &dir.path().join("pet.mvol")).unwrap();
        write_mvol(&vol(Modality::Mask), &dir.path().join("mask.mvol")).unwrap();
        let mut study: ManifestStudy = serde_json::from_str(&format!(
            r#"{{"id": "s", "ct_path": "ct.mvol", "pet_path": "pet.mvol",
                 "mask_path": "mask.mvol", "label": 0, "meta": {m}}}"#,
            m = meta_json()
        ))
        .unwrap();
        study.meta.photometric = Photometric::Inverted;
        let raw = load_study(dir.path(), &study).unwrap();
        assert_eq!(raw.ct.photometric, Photometric::Inverted);
        assert_eq!(raw.pet.modality, Modality::Pet);

        // Pointing ct_path at the PET file is caught.
        study.ct_path = "pet.mvol".into();
        assert!(matches!(load_study(dir.path(), &study), Err(Error::Data(_))));
    }
}
