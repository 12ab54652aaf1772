use maskfuse_core::io::{read_dataset, read_manifest, write_manifest};
use maskfuse_core::pipeline::{run_pipeline, run_pipeline_data, ClipData, PipelineConfig};
use maskfuse_core::synth::{clip_seed, export_dataset, generate_bundle, PerturbConfig, SynthConfig};
use maskfuse_core::Error;

fn cfg() -> SynthConfig {
    SynthConfig {
        seed: 21,
        width: 48,
        height: 32,
        frames: 18,
        num_classes: 9,
        feature_dim: 4,
        perturb: PerturbConfig {
            boundary_jitter_radius: 2,
            class_swap_rate: 0.1,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn disk_round_trip_matches_memory() {
    let dir = tempfile::tempdir().unwrap();
    let index = export_dataset(&cfg(), 3, dir.path()).unwrap();
    let clips = read_dataset(&index).unwrap();
    assert_eq!(clips.len(), 3);
    let on_disk = run_pipeline(&clips, &PipelineConfig::default(), 2).unwrap();

    let mem: Vec<ClipData> = (0..3)
        .map(|k| {
            let c = SynthConfig {
                seed: clip_seed(cfg().seed, k),
                ..cfg()
            };
            let b = generate_bundle(&c).unwrap();
            ClipData {
                clip_id: format!("clip_{k:04}"),
                num_classes: c.num_classes,
                gt: b.clip.gt,
                pred: b.pred,
                masklets: b.masklets,
            }
        })
        .collect();
    let in_memory = run_pipeline_data(&mem, &PipelineConfig::default()).unwrap();
    assert_eq!(on_disk, in_memory);
    assert!(on_disk.delta.miou > 0.0);
}

#[test]
fn partial_clips_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let index = export_dataset(&cfg(), 2, dir.path()).unwrap();
    let path = dir.path().join("clip_0001/manifest.json");
    let mut m = read_manifest(&path).unwrap();
    m.frames[3].pred_path = None;
    write_manifest(&m, &path).unwrap();
    let r = run_pipeline(&read_dataset(&index).unwrap(), &PipelineConfig::default(), 1).unwrap();
    assert_eq!(r.skipped_clips, 1);
    assert_eq!(r.clips, vec!["clip_0000".to_string()]);
}

#[test]
fn missing_file_error_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let index = export_dataset(&cfg(), 1, dir.path()).unwrap();
    let gone = dir.path().join("clip_0000/gt/00005.png");
    std::fs::remove_file(&gone).unwrap();
    let err = run_pipeline(&read_dataset(&index).unwrap(), &PipelineConfig::default(), 1).unwrap_err();
    assert!(matches!(err, Error::Io { .. }), "{err:?}");
    assert!(err.to_string().contains("00005.png"), "{err}");
}
