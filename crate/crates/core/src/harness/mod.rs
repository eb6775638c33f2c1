//! Experiment orchestration: configuration, the accuracy-versus-training-size
//! run, CSV and SVG reports, and model bundles.

pub mod bundle;
pub mod config;
pub mod experiment;
pub mod report;

pub use bundle::{load_bundle, save_bundle, Bundle};
pub use config::{task_label, DataSplit, ExperimentConfig, VocabScope, DATA_DIR_ENV};
pub use experiment::{
    balanced_subset, prepare_group, run_cell, run_experiment, run_experiment_on, CellResult, FramePipeline,
    PreparedGroup, ResultRow, SourceData,
};
pub use report::{plot_results, plot_svg, read_results_csv, results_csv, trend_notes, write_results_csv};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bovw::{TrainingMeta, Vocabulary};
    use crate::classifiers::{train_roster, CandidateSpec, KernelSpec, Roster};
    use crate::error::Error;
    use crate::surf::{Descriptor, FeatureParams, DESCRIPTOR_LEN};

    fn vocab(k: usize) -> Vocabulary {
        let cents = (0..k)
            .map(|i| {
                let mut c = [0.0; DESCRIPTOR_LEN];
                c[i % DESCRIPTOR_LEN] = 1.0 + (i / DESCRIPTOR_LEN) as f64;
                c
            })
            .collect();
        Vocabulary::from_centroids(
            cents,
            TrainingMeta {
                n_images_used: 0,
                seed: 3,
                iterations_run: 0,
                final_inertia: 0.0,
            },
        )
        .unwrap()
    }

    fn descriptor_sets(n: usize) -> (Vec<Vec<Descriptor>>, Vec<u8>) {
        let mut sets = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let class = (i % 3) as u8;
            let set = (0..6)
                .map(|j| {
                    let mut d = Descriptor::zero();
                    d.0[(class as usize * 4 + (i * 7 + j) % 5) % DESCRIPTOR_LEN] = 1.0;
                    d
                })
                .collect();
            sets.push(set);
            labels.push(class);
        }
        (sets, labels)
    }

    #[test]
    fn bundle_round_trip_for_every_kind() {
        let v = vocab(12);
        let (sets, y) = descriptor_sets(60);
        let x: Vec<Vec<f64>> = sets.iter().map(|s| v.encode(s).weights).collect();
        let roster = Roster {
            candidates: vec![
                CandidateSpec::Svm { c: 1.0, kernel: KernelSpec::Linear },
                CandidateSpec::Svm { c: 2.0, kernel: KernelSpec::Rbf { gamma: None } },
                CandidateSpec::Knn { k: 3 },
                CandidateSpec::Tree { max_depth: 4, min_leaf: 1 },
            ],
            standardize: true,
        };
        for model in train_roster(&x, &y, &roster).unwrap() {
            let dir = tempfile::tempdir().unwrap();
            let bundle = Bundle {
                model,
                vocab: v.clone(),
                features: FeatureParams::default(),
            };
            bundle.save(dir.path()).unwrap();
            let back = Bundle::load(dir.path()).unwrap();
            assert_eq!(back.model.model, bundle.model.model);
            assert_eq!(back.model.standardizer, bundle.model.standardizer);
            assert_eq!(back.features, bundle.features);
            for s in &sets {
                assert_eq!(back.classify_descriptors(s).unwrap(), bundle.classify_descriptors(s).unwrap());
            }
        }
    }

    #[test]
    fn bundle_errors() {
        let v = vocab(4);
        let (sets, y) = descriptor_sets(12);
        let x: Vec<Vec<f64>> = sets.iter().map(|s| v.encode(s).weights).collect();
        let model = train_roster(&x, &y, &Roster::default()).unwrap().remove(0);
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&model, &v, &FeatureParams::default(), dir.path()).unwrap();

        let coef = dir.path().join("coef.f32");
        let bytes = std::fs::read(&coef).unwrap();
        std::fs::write(&coef, &bytes[..bytes.len() - 2]).unwrap();
        match load_bundle(dir.path()) {
            Err(Error::Format(m)) => assert!(m.contains("coef.f32"), "{m}"),
            other => panic!("expected a format error, got {other:?}"),
        }
        std::fs::write(&coef, &bytes).unwrap();

        let manifest = dir.path().join("manifest");
        let text = std::fs::read_to_string(&manifest).unwrap();
        std::fs::write(&manifest, text.replace("format_version=1", "format_version=999")).unwrap();
        assert!(matches!(
            load_bundle(dir.path()),
            Err(Error::Version { found: 999, expected: 1 })
        ));
    }
}
