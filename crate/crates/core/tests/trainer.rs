use iasplat::gaussian::{rasterize, RasterSettings, Splat, SplatField};
use iasplat::image::{DepthMap, Grid, Mask, RgbImage};
use iasplat::oracle::FieldDepthOracle;
use iasplat::predictor::{PredictorParams, FEATURE_CHANNELS};
use iasplat::refine::{OracleRefiner, RefineError, RefineRequest, RefineResponse, Refiner};
use iasplat::trainer::{
    gs_loss, pearson, predictor_seed, train, GsLossInputs, GsLossWeights, TrainConfig, TrainError,
    TrainState, ViewState,
};
use iasplat::CameraView;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const W: usize = 24;

fn random_inputs(
    rng: &mut ChaCha8Rng,
) -> (
    RgbImage,
    RgbImage,
    RgbImage,
    Mask,
    Mask,
    DepthMap,
    DepthMap,
    Mask,
) {
    let img = |rng: &mut ChaCha8Rng| {
        Grid::from_fn(7, 5, |_, _| [rng.random(), rng.random(), rng.random()])
    };
    let mask = |rng: &mut ChaCha8Rng, p| Grid::from_fn(7, 5, |_, _| rng.random_bool(p));
    let depth = |rng: &mut ChaCha8Rng| Grid::from_fn(7, 5, |_, _| rng.random_range(1.0..5.0));
    (
        img(rng),
        img(rng),
        img(rng),
        mask(rng, 0.2),
        mask(rng, 0.3),
        depth(rng),
        depth(rng),
        mask(rng, 0.8),
    )
}

#[test]
fn composite_loss_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let (render, refined, initial, mlp, refine, dr, dc, valid) = random_inputs(&mut rng);
        let inputs = GsLossInputs {
            render: &render,
            refined: &refined,
            initial: &initial,
            mlp: &mlp,
            refine: &refine,
            rendered_depth: &dr,
            conditioned_depth: &dc,
            depth_valid: &valid,
        };
        let loss = gs_loss(&inputs, &GsLossWeights::default());
        let n = 3.0 * 35.0;
        let (mut l2, mut l1) = (0.0, 0.0);
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for i in 0..35 {
            for c in 0..3 {
                let d = render.data()[i][c];
                if mlp.data()[i] || refine.data()[i] {
                    l2 += (refined.data()[i][c] - d).powi(2);
                } else {
                    l1 += (d - initial.data()[i][c]).abs();
                }
            }
            if valid.data()[i] {
                xs.push(dc.data()[i]);
                ys.push(dr.data()[i]);
            }
        }
        let p = pearson(&xs, &ys).unwrap().value;
        assert!((loss.total - (l2 / n + l1 / n - p)).abs() < 1e-12);

        // Decomposition at the mask extremes.
        let none = Grid::filled(7, 5, false);
        let all = Grid::filled(7, 5, true);
        let empty = gs_loss(
            &GsLossInputs {
                mlp: &none,
                refine: &none,
                ..inputs
            },
            &GsLossWeights::default(),
        );
        assert_eq!(empty.l2, 0.0);
        assert_eq!(empty.total, empty.l1 - empty.pearson.value);
        let full = gs_loss(
            &GsLossInputs {
                mlp: &all,
                refine: &none,
                ..inputs
            },
            &GsLossWeights::default(),
        );
        assert_eq!(full.l1, 0.0);
        assert_eq!(full.total, full.l2 - full.pearson.value);
    }
}

#[test]
fn composite_loss_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let (render, refined, initial, mlp, refine, dr, dc, valid) = random_inputs(&mut rng);
        let eval = |r: &RgbImage, d: &DepthMap| {
            gs_loss(
                &GsLossInputs {
                    render: r,
                    refined: &refined,
                    initial: &initial,
                    mlp: &mlp,
                    refine: &refine,
                    rendered_depth: d,
                    conditioned_depth: &dc,
                    depth_valid: &valid,
                },
                &GsLossWeights::default(),
            )
        };
        let base = eval(&render, &dr);
        let h = 1e-7;
        for i in 0..35 {
            for c in 0..3 {
                let mut p = render.clone();
                let mut m = render.clone();
                p.data_mut()[i][c] += h;
                m.data_mut()[i][c] -= h;
                let fd = (eval(&p, &dr).total - eval(&m, &dr).total) / (2.0 * h);
                assert!((fd - base.grad_color.data()[i][c]).abs() < 1e-6);
            }
            let mut p = dr.clone();
            let mut m = dr.clone();
            p.data_mut()[i] += h;
            m.data_mut()[i] -= h;
            let fd = (eval(&render, &p).total - eval(&render, &m).total) / (2.0 * h);
            assert!((fd - base.grad_depth.data()[i]).abs() < 1e-6);
        }
    }
}

/// A small textured wall seen by four cameras; the first frame carries a
/// recolored rectangle.
fn scene() -> (SplatField, Vec<CameraView>, Vec<RgbImage>) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut splats = Vec::new();
    for j in 0..8 {
        for i in 0..8 {
            splats.push(Splat::new(
                Vector3::new(
                    -1.4 + 0.4 * i as f64,
                    -1.4 + 0.4 * j as f64,
                    4.0 + 0.1 * rng.random::<f64>(),
                ),
                Vector3::new(0.25, 0.25, 0.05),
                0.9,
                Vector3::new(rng.random(), rng.random(), rng.random()),
            ));
        }
    }
    let gt = SplatField::new(splats, Vector3::zeros());
    let cams: Vec<CameraView> = (0..4)
        .map(|k| {
            let eye = Vector3::new(-0.3 + 0.2 * k as f64, 0.0, 0.0);
            CameraView::look_at(
                eye,
                Vector3::new(0.0, 0.0, 4.0),
                Vector3::new(0.0, -1.0, 0.0),
                20.0,
                W,
                W,
            )
            .unwrap()
        })
        .collect();
    let frames = cams
        .iter()
        .map(|c| rasterize(&gt, c, &RasterSettings::default()).color)
        .collect();
    (gt, cams, frames)
}

fn state(seed: u64) -> (TrainState, SplatField, Vec<RgbImage>) {
    let (gt, cams, truth) = scene();
    let mut init = gt.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for s in &mut init.splats {
        s.mean += Vector3::from_fn(|_, _| rng.random_range(-0.05..0.05));
        s.color = s
            .color
            .map(|c| (c + rng.random_range(-0.2..0.2)).clamp(0.0, 1.0));
    }
    let views = cams
        .iter()
        .zip(&truth)
        .enumerate()
        .map(|(i, (c, f))| {
            let mut observed = f.clone();
            if i == 0 {
                for y in 4..10 {
                    for x in 6..14 {
                        observed.set(x, y, [1.0, 0.0, 1.0]);
                    }
                }
            }
            ViewState::new(
                c.clone(),
                observed,
                Grid::filled(W, W, false),
                Grid::filled(W, W, false),
            )
        })
        .collect();
    (TrainState::new(init, views, seed), gt, truth)
}

fn config(seed: u64) -> TrainConfig {
    TrainConfig {
        total_iterations: 60,
        refine_interval: 20,
        densify_from: 10,
        densify_interval: 10,
        log_interval: 10,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn short_run_has_expected_rounds_and_resets() {
    let (mut st, gt, truth) = state(3);
    let cfg = config(3);
    let mut refiner = OracleRefiner::new(truth, 3);
    let mut depth = FieldDepthOracle::new(gt, 0.01, 3);
    train(&mut st, &cfg, &mut refiner, &mut depth).unwrap();
    assert_eq!(st.iteration, 60);
    let its: Vec<u64> = st.rounds.iter().map(|r| r.iteration).collect();
    assert_eq!(its, vec![20, 40, 60]);
    assert_eq!(refiner.calls, 3);
    for (k, r) in st.rounds.iter().enumerate() {
        assert_eq!(r.round, k + 1);
        assert_eq!(r.reset_seed, predictor_seed(3, k + 1));
        assert!((r.s - cfg.s_at(r.iteration)).abs() < 1e-15);
    }
    // The last round ends the run, so the head is exactly its reset state.
    assert_eq!(
        st.phi,
        PredictorParams::initialized(FEATURE_CHANNELS, predictor_seed(3, 3))
    );
    assert_eq!(st.log.len(), 7);
    assert!(st.log.iter().all(|r| r.total.is_finite()));
}

#[test]
fn identical_seeds_give_identical_runs_and_checkpoints() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut results = Vec::new();
    for d in &dirs {
        let (mut st, gt, truth) = state(9);
        let cfg = TrainConfig {
            checkpoint_dir: Some(d.path().to_path_buf()),
            ..config(9)
        };
        train(
            &mut st,
            &cfg,
            &mut OracleRefiner::new(truth, 9),
            &mut FieldDepthOracle::new(gt, 0.01, 9),
        )
        .unwrap();
        results.push(st);
    }
    assert_eq!(results[0], results[1]);
    for name in ["field.txt", "predictor.txt", "metrics.csv", "state.txt"] {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn ablation_never_predicts_inconsistency() {
    let (mut st, gt, truth) = state(4);
    let cfg = TrainConfig {
        ia_gs: false,
        ..config(4)
    };
    train(
        &mut st,
        &cfg,
        &mut OracleRefiner::new(truth, 4),
        &mut FieldDepthOracle::new(gt, 0.0, 4),
    )
    .unwrap();
    assert!(st
        .rounds
        .iter()
        .all(|r| r.mlp_masks.iter().all(|m| m.count() == 0)));
}

struct FailOnCall {
    inner: OracleRefiner,
    fail_at: u64,
}

impl Refiner for FailOnCall {
    fn refine(&mut self, request: &RefineRequest) -> Result<RefineResponse, RefineError> {
        if self.inner.calls + 1 == self.fail_at {
            self.inner.calls += 1;
            return Err(RefineError::Failed("model crashed".into()));
        }
        self.inner.refine(request)
    }
}

#[test]
fn refiner_failure_checkpoints_and_leaves_state_intact() {
    let dir = tempfile::tempdir().unwrap();
    let (mut st, gt, truth) = state(6);
    let cfg = TrainConfig {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..config(6)
    };
    let mut refiner = FailOnCall {
        inner: OracleRefiner::new(truth, 6),
        fail_at: 2,
    };
    let err = train(
        &mut st,
        &cfg,
        &mut refiner,
        &mut FieldDepthOracle::new(gt, 0.01, 6),
    )
    .unwrap_err();
    match &err {
        TrainError::Refine {
            round,
            iteration,
            checkpoint,
            ..
        } => {
            assert_eq!((*round, *iteration), (2, 40));
            assert_eq!(checkpoint.as_deref(), Some(dir.path()));
        }
        other => panic!("unexpected error {other}"),
    }
    assert_eq!(err.category(), "refiner-failed");
    assert_eq!(st.iteration, 40);
    assert_eq!(st.rounds.len(), 1);
    let saved = SplatField::load(&dir.path().join("field.txt")).unwrap();
    assert_eq!(saved.len(), st.field.len());
    let state_txt = std::fs::read_to_string(dir.path().join("state.txt")).unwrap();
    assert!(state_txt.starts_with("iteration 40\nrounds 1\n"));
}

#[test]
fn invalid_state_is_rejected() {
    let (mut st, gt, truth) = state(1);
    st.views[2].refine_mask = Grid::filled(3, 3, false);
    let err = train(
        &mut st,
        &config(1),
        &mut OracleRefiner::new(truth, 1),
        &mut FieldDepthOracle::new(gt, 0.0, 1),
    )
    .unwrap_err();
    assert_eq!(err.category(), "precondition");
}
