use std::path::Path;
use std::process::Command;

use iasplat::image::Grid;
use iasplat::trainer::PSNR_CAP;
use iasplat::SplatField;
use iasplat_cli::layout::{DataLayout, RunLayout};
use iasplat_cli::pipeline::{cmd_eval, cmd_init, cmd_synth, cmd_train, depth_pearson, sub_seed};
use iasplat_cli::synth::generate;
use iasplat_cli::{CliError, PipelineConfig, Profile};

fn smoke(root: &Path) -> PipelineConfig {
    PipelineConfig {
        data_dir: root.join("data"),
        out_dir: root.join("run"),
        ..PipelineConfig::profile(Profile::Smoke)
    }
}

#[test]
fn config_serialization_is_a_fixed_point() {
    for p in [Profile::Smoke, Profile::Desk, Profile::Paper] {
        let mut cfg = PipelineConfig::profile(p);
        cfg.seed = 42;
        cfg.refiner_dir = Some("exchange".into());
        cfg.geometry.eps_occ = Some(0.05);
        let text = cfg.serialize();
        let back = PipelineConfig::parse(&text, Path::new("c.cfg"), Profile::Desk).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.serialize(), text);
    }
}

#[test]
fn config_errors_name_the_line() {
    let path = Path::new("bad.cfg");
    let err =
        PipelineConfig::parse("seed = 1\n# note\nbogus = 3\n", path, Profile::Desk).unwrap_err();
    assert_eq!(err.category(), "config");
    assert!(err.to_string().starts_with("bad.cfg:3:"), "{err}");
    let err =
        PipelineConfig::parse("seed = 1\nprofile = smoke\n", path, Profile::Desk).unwrap_err();
    assert!(err.to_string().contains("must precede"), "{err}");
    let err = PipelineConfig::parse("seed = x\n", path, Profile::Desk).unwrap_err();
    assert!(matches!(err, CliError::ConfigParse { line: 1, .. }));
}

#[test]
fn profile_key_resets_but_keeps_seed() {
    let mut cfg = PipelineConfig::profile(Profile::Desk);
    cfg.seed = 7;
    cfg.apply("profile = smoke\nviews = 9\n", Path::new("c"))
        .unwrap();
    assert_eq!(cfg.profile, Profile::Smoke);
    assert_eq!(cfg.seed, 7);
    assert_eq!(cfg.synth.views, 9);
    assert_eq!(
        cfg.train,
        PipelineConfig::profile(Profile::Smoke).train,
        "other keys come from the smoke profile"
    );
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = PipelineConfig::profile(Profile::Desk);
    cfg.reference_view = cfg.synth.corrupt_views[0];
    assert_eq!(cfg.validate().unwrap_err().category(), "config");
    let mut cfg = PipelineConfig::profile(Profile::Desk);
    cfg.synth.corrupt_views = (0..cfg.synth.views).collect();
    assert_eq!(cfg.validate().unwrap_err().category(), "spec");
    let mut cfg = PipelineConfig::profile(Profile::Desk);
    cfg.train.refine_interval = 0;
    assert_eq!(cfg.validate().unwrap_err().category(), "config");
}

#[test]
fn sub_seeds_are_distinct_and_stable() {
    let s: Vec<u64> = (1..=3).map(|k| sub_seed(5, k)).collect();
    assert!(s[0] != s[1] && s[1] != s[2] && s[0] != s[2]);
    assert_eq!(sub_seed(5, 2), s[1]);
    assert_ne!(sub_seed(6, 2), s[1]);
}

#[test]
fn synthetic_scene_is_seeded_and_corrupts_requested_views() {
    let spec = PipelineConfig::profile(Profile::Desk).synth;
    let a = generate(&spec, 3).unwrap();
    assert_eq!(a, generate(&spec, 3).unwrap());
    assert_ne!(a.field, generate(&spec, 4).unwrap().field);
    assert_eq!(a.cameras.len(), 12);
    let side = spec.square_side();
    for (i, m) in a.corruption_masks().iter().enumerate() {
        if spec.corrupt_views.contains(&i) {
            assert_eq!(m.count(), side * side);
            assert!((m.count() as f64 / 4096.0 - 0.1).abs() < 0.01);
            // Every corrupted pixel differs from the clean frame.
            for (k, &c) in m.data().iter().enumerate() {
                if c {
                    assert_ne!(a.observed[i].data()[k], a.gt_color[i].data()[k]);
                }
            }
        } else {
            assert_eq!(m.count(), 0);
            assert_eq!(a.observed[i], a.gt_color[i]);
        }
    }
}

#[test]
fn eval_of_ground_truth_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke(dir.path());
    let scene = cmd_synth(&cfg).unwrap();
    let ckpt = RunLayout::new(&cfg.out_dir).checkpoint_dir();
    std::fs::create_dir_all(&ckpt).unwrap();
    scene.field.save(&ckpt.join("field.txt")).unwrap();
    let report = cmd_eval(&cfg).unwrap();
    for p in &report.per_view {
        assert!(p.samples > 0 && !p.zero_variance);
        assert!((p.value - 1.0).abs() < 1e-9, "{}", p.value);
    }
    assert_eq!(report.psnr, Some(PSNR_CAP));
    assert_eq!(report.masked_psnr, Some(PSNR_CAP));
    assert_eq!(report.iou, None);
    let text = std::fs::read_to_string(RunLayout::new(&cfg.out_dir).eval_report()).unwrap();
    assert!(text.starts_with("mean_depth_pearson = "));
}

#[test]
fn constant_depth_has_zero_pearson_with_flag() {
    let rendered = Grid::filled(6, 5, 2.0);
    let alpha = Grid::filled(6, 5, 1.0);
    let reference = Grid::from_fn(6, 5, |x, y| 1.0 + (x * y) as f64);
    let p = depth_pearson(&rendered, &alpha, &reference);
    assert_eq!(p.value, 0.0);
    assert!(p.zero_variance);
    assert_eq!(p.samples, 30);
    // Transparent pixels never count.
    let p = depth_pearson(&reference, &Grid::filled(6, 5, 0.2), &reference);
    assert_eq!(p.samples, 0);
}

#[test]
fn train_requires_init_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke(dir.path());
    cmd_synth(&cfg).unwrap();
    let err = cmd_train(&cfg).err().unwrap();
    assert_eq!(err.category(), "precondition");
    assert!(err.to_string().contains("init"), "{err}");
}

#[test]
fn init_writes_cloud_and_masks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke(dir.path());
    cmd_synth(&cfg).unwrap();
    let s = cmd_init(&cfg).unwrap();
    assert!(s.reference_points > 0 && s.total_points >= s.reference_points);
    assert_eq!(s.added.len(), cfg.aux_views);
    assert!(s.added.iter().all(|&(v, _)| v != cfg.reference_view));
    let run = RunLayout::new(&cfg.out_dir);
    assert!(run.cloud().exists() && run.init_report().exists());
    for i in 0..cfg.synth.views {
        assert!(run.refine_mask(i).exists() && run.occ_mask(i).exists());
    }
    assert!(DataLayout::new(&cfg.data_dir).gt_field().exists());
    assert!(SplatField::load(&DataLayout::new(&cfg.data_dir).gt_field()).is_ok());
}

fn iasplat(args: &[&str], cwd: &Path) -> (bool, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_iasplat"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap();
    (
        out.status.success(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn binary_reports_categorized_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (ok, _, err) = iasplat(&["synth", "--set", "nonsense=1"], d);
    assert!(!ok);
    assert!(err.starts_with("error[config]:"), "{err}");
    let (ok, _, err) = iasplat(&["synth", "--set", "views=1"], d);
    assert!(!ok);
    assert!(err.starts_with("error[spec]:"), "{err}");
    let (ok, _, err) = iasplat(&["train", "--profile", "smoke"], d);
    assert!(!ok);
    assert!(err.starts_with("error[missing-input]:"), "{err}");
    std::fs::write(d.join("c.cfg"), "views = \n").unwrap();
    let (ok, _, err) = iasplat(&["synth", "--config", "c.cfg"], d);
    assert!(!ok);
    assert!(err.starts_with("error[config]: c.cfg:1:"), "{err}");
}

#[test]
fn binary_synth_honours_config_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("c.cfg"), "profile = smoke\ndata_dir = ds\n").unwrap();
    let (ok, out, err) = iasplat(&["synth", "--config", "c.cfg", "--seed", "9"], d);
    assert!(ok, "{err}");
    assert!(out.starts_with("synth: 8 views"), "{out}");
    let expected = generate(&PipelineConfig::profile(Profile::Smoke).synth, 9).unwrap();
    let written = SplatField::load(&DataLayout::new(d.join("ds")).gt_field()).unwrap();
    assert_eq!(written.len(), expected.field.len());
}
