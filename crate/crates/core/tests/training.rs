mod common;

use common::*;
use mmfield::checkpoint::Checkpoint;
use mmfield::field::*;
use mmfield::render::{Modality, Ray, RenderOutput, Target};
use mmfield::scene::{Dataset, Preset};
use mmfield::train::*;
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config() -> TrainConfig {
    TrainConfig {
        rays_per_step: 8,
        iterations: 4,
        sampling: SamplingConfig {
            coarse: 12,
            fine: 4,
        },
        chunk_rays: 3,
        ..TrainConfig::default()
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn batch_sizes_follow_weights_and_heads() {
    let cfg = config();
    assert_eq!(batch_sizes(&cfg, true, true), (8, 8));
    assert_eq!(
        batch_sizes(
            &TrainConfig {
                lambda_c: 0.0,
                ..cfg.clone()
            },
            true,
            true
        ),
        (8, 0)
    );
    assert_eq!(
        batch_sizes(
            &TrainConfig {
                lambda_l: 0.0,
                ..cfg.clone()
            },
            true,
            true
        ),
        (0, 8)
    );
    assert_eq!(batch_sizes(&cfg, true, false), (8, 0));
}

#[test]
fn make_batch_is_deterministic_and_uses_training_frames() {
    let d = tiny_dataset(Preset::MisalignedStreet);
    let a = make_batch(&d, (8, 5), &mut rng(1), &mut rng(2)).unwrap();
    let b = make_batch(&d, (8, 5), &mut rng(1), &mut rng(2)).unwrap();
    assert_eq!(a.lidar.len(), 8);
    assert_eq!(a.camera.len(), 5);
    assert_eq!(a.lidar_refs, b.lidar_refs);
    assert_eq!(a.camera_refs, b.camera_refs);
    let train = d.frame_indices(mmfield::scene::Split::Train);
    assert!(a
        .lidar_refs
        .iter()
        .chain(&a.camera_refs)
        .all(|r| train.contains(&r.frame)));
    assert!(a.lidar.iter().all(|r| r.modality == Modality::Lidar));
    // Each modality consumes only its own stream.
    let c = make_batch(&d, (8, 0), &mut rng(1), &mut rng(99)).unwrap();
    assert_eq!(c.lidar_refs, a.lidar_refs);
    assert!(c.camera.is_empty());
}

#[test]
fn weighted_sum_example() {
    let cfg = TrainConfig {
        lambda_l: 1.0,
        lambda_c: 2.0,
        ..TrainConfig::default()
    };
    // Depth carries weight 1, so the LiDAR term is 0.5; the camera term is 0.25.
    let parts = LossBreakdown {
        depth: 0.5,
        rgb: 0.25,
        ..LossBreakdown::default()
    };
    assert!((parts.combine(&cfg) - 1.0).abs() < 1e-15);
}

fn output(color: [f64; 3], depth: f64, intensity: f64, drop_prob: f64) -> RenderOutput {
    RenderOutput {
        color,
        depth,
        intensity,
        drop_prob,
        opacity: 1.0,
        weights: vec![],
        trans_residual: 0.0,
    }
}

fn ray(modality: Modality, target: Target) -> Ray {
    let mut r = Ray::new(Vector3::zeros(), Vector3::x(), modality);
    r.t_far = 20.0;
    r.target = Some(target);
    r
}

#[test]
fn perfect_predictions_have_near_zero_loss() {
    let cfg = TrainConfig::default();
    let lidar = vec![
        (
            ray(
                Modality::Lidar,
                Target::Lidar {
                    depth: 4.0,
                    intensity: 0.3,
                    drop: 0.0,
                },
            ),
            output([0.0; 3], 4.0, 0.3, 0.0),
        ),
        (
            ray(
                Modality::Lidar,
                Target::Lidar {
                    depth: 0.0,
                    intensity: 0.0,
                    drop: 1.0,
                },
            ),
            output([0.0; 3], 0.0, 0.0, 1.0),
        ),
    ];
    let camera = vec![(
        ray(Modality::Camera, Target::Color([0.2, 0.5, 0.9])),
        output([0.2, 0.5, 0.9], 0.0, 0.0, 0.0),
    )];
    let l = loss_from_outputs(&cfg, 8.0, &lidar, &camera).unwrap();
    assert_eq!(l.rgb, 0.0);
    assert_eq!(l.depth, 0.0);
    assert_eq!(l.intensity, 0.0);
    // The BCE is clamped away from log(0).
    assert!(l.drop >= 0.0 && l.drop < 1e-5, "{}", l.drop);
    assert!(l.total < 1e-6);
}

#[test]
fn loss_components_by_hand() {
    let cfg = TrainConfig::default();
    let half = 8.0;
    let lidar = vec![
        (
            ray(
                Modality::Lidar,
                Target::Lidar {
                    depth: 4.0,
                    intensity: 0.3,
                    drop: 0.0,
                },
            ),
            output([0.0; 3], 5.6, 0.5, 0.5),
        ),
        (
            ray(
                Modality::Lidar,
                Target::Lidar {
                    depth: 2.0,
                    intensity: 0.1,
                    drop: 0.0,
                },
            ),
            output([0.0; 3], 2.0, 0.1, 0.5),
        ),
    ];
    let camera = vec![(
        ray(Modality::Camera, Target::Color([0.0, 0.0, 0.0])),
        output([0.3, 0.0, 0.0], 0.0, 0.0, 0.0),
    )];
    let l = loss_from_outputs(&cfg, half, &lidar, &camera).unwrap();
    assert!((l.depth - 1.6 / (half * 2.0)).abs() < 1e-12);
    assert!((l.intensity - 0.04 / 2.0).abs() < 1e-12);
    assert!((l.drop - std::f64::consts::LN_2).abs() < 1e-12);
    assert!((l.rgb - 0.09 / 3.0).abs() < 1e-12);
}

fn replay(model: &mut Model, batch: &Batch, cfg: &TrainConfig) -> LossBreakdown {
    model.params.zero_grad();
    let l = compute_gradients(model, batch, cfg, &mut rng(7), &mut rng(8), 0).unwrap();
    model.params.zero_grad();
    l
}

#[test]
fn tape_loss_matches_direct_loss() {
    let d = tiny_dataset(Preset::MisalignedStreet);
    let g = tiny_grid(d.scene.bounds.clone());
    let cfg = config();
    let batch = make_batch(&d, (16, 16), &mut rng(3), &mut rng(4)).unwrap();
    for arch in [
        Architecture::SharedFusion,
        Architecture::Alignmif,
        Architecture::DecompDensity,
    ] {
        let mut m = model(spec(arch), &g, 5);
        m.randomize(6, 0.3);
        let tape = replay(&mut m, &batch, &cfg);

        let t_l = sample_positions(
            &m,
            &batch.lidar,
            &cfg.sampling,
            cfg.chunk_rays,
            Some(&mut rng(7)),
        )
        .unwrap();
        let t_c = sample_positions(
            &m,
            &batch.camera,
            &cfg.sampling,
            cfg.chunk_rays,
            Some(&mut rng(8)),
        )
        .unwrap();
        let out_l = render_rays(&m, &batch.lidar, &t_l, cfg.chunk_rays).unwrap();
        let out_c = render_rays(&m, &batch.camera, &t_c, cfg.chunk_rays).unwrap();
        let pair = |r: &[Ray], o: Vec<RenderOutput>| r.iter().cloned().zip(o).collect::<Vec<_>>();
        let direct = loss_from_outputs(
            &cfg,
            d.scene.bounds.half_extent(),
            &pair(&batch.lidar, out_l),
            &pair(&batch.camera, out_c),
        )
        .unwrap();
        for (a, b) in [
            (tape.total, direct.total),
            (tape.rgb, direct.rgb),
            (tape.depth, direct.depth),
            (tape.intensity, direct.intensity),
            (tape.drop, direct.drop),
        ] {
            assert!(
                (a - b).abs() <= 1e-9 * b.abs().max(1.0),
                "{}: {a} vs {b}",
                arch.name()
            );
        }
    }
}

#[test]
fn total_is_the_weighted_sum_of_components() {
    let d = tiny_dataset(Preset::MisalignedStreet);
    let g = tiny_grid(d.scene.bounds.clone());
    let batch = make_batch(&d, (16, 16), &mut rng(9), &mut rng(10)).unwrap();
    for (arch, w) in [
        (Architecture::SharedFusion, 0.5),
        (Architecture::HardConstraint, 2.0),
        (Architecture::Gaa, 5.0),
    ] {
        let cfg = config().with_wlambda(w);
        let mut m = model(spec(arch), &g, 11);
        m.randomize(12, 0.3);
        let l = replay(&mut m, &batch, &cfg);
        assert!((l.total - l.combine(&cfg)).abs() < 1e-12, "{}", arch.name());
        if arch == Architecture::HardConstraint {
            assert!(l.constraint > 0.0);
        } else {
            assert_eq!(l.constraint, 0.0);
        }
    }
}

#[test]
fn depth_targets_of_dropped_rays_are_ignored() {
    let d = tiny_dataset(Preset::MisalignedStreet);
    let g = tiny_grid(d.scene.bounds.clone());
    let cfg = config();
    let batch = make_batch(&d, (64, 4), &mut rng(13), &mut rng(14)).unwrap();
    let dropped = batch
        .lidar
        .iter()
        .filter(|r| matches!(r.target, Some(Target::Lidar { drop, .. }) if drop > 0.5))
        .count();
    assert!(dropped > 0 && dropped < batch.lidar.len());
    let mut corrupted = batch.clone();
    for r in &mut corrupted.lidar {
        if let Some(Target::Lidar {
            depth,
            intensity,
            drop,
        }) = r.target
        {
            if drop > 0.5 {
                r.target = Some(Target::Lidar {
                    depth: depth + 17.0,
                    intensity: intensity + 0.4,
                    drop,
                });
            }
        }
    }
    let mut m = model(spec(Architecture::SharedFusion), &g, 15);
    m.randomize(16, 0.3);
    let a = replay(&mut m, &batch, &cfg);
    let b = replay(&mut m, &corrupted, &cfg);
    assert_eq!(a, b);
}

#[test]
fn zero_camera_weight_freezes_camera_parameters() {
    let d = tiny_dataset(Preset::MisalignedStreet);
    let g = tiny_grid(d.scene.bounds.clone());
    for arch in [Architecture::DecompGeometry, Architecture::DecompHash] {
        for (off, cfg) in [
            (
                Modality::Camera,
                TrainConfig {
                    lambda_c: 0.0,
                    ..config()
                },
            ),
            (
                Modality::Lidar,
                TrainConfig {
                    lambda_l: 0.0,
                    ..config()
                },
            ),
        ] {
            let mut m = model(spec(arch), &g, 17);
            let before = m.params.values.clone();
            train(&mut m, &d, &cfg, None).unwrap();
            for r in m.exclusive_ranges(off) {
                assert_eq!(&m.params.values[r.clone()], &before[r], "{}", arch.name());
            }
            assert_ne!(m.params.values, before);
        }
    }
}

#[test]
fn zero_iterations_write_only_the_initial_checkpoint() {
    let d = tiny_dataset(Preset::AlignedStreet);
    let g = tiny_grid(d.scene.bounds.clone());
    let dir = tempfile::tempdir().unwrap();
    let mut m = model(spec(Architecture::SharedFusion), &g, 18);
    let initial = m.params.values.clone();
    let report = train(
        &mut m,
        &d,
        &TrainConfig {
            iterations: 0,
            ..config()
        },
        Some(dir.path()),
    )
    .unwrap();
    assert_eq!(report.checkpoints, vec![dir.path().join("final.bin")]);
    let ckpt = Checkpoint::load(&dir.path().join("final.bin")).unwrap();
    assert_eq!(ckpt.step(), 0);
    let restored = ckpt.to_model().unwrap();
    for (a, b) in restored.params.values.iter().zip(&initial) {
        assert_eq!(*a, *b as f32 as f64);
    }
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let d = tiny_dataset(Preset::MisalignedStreet);
    let g = tiny_grid(d.scene.bounds.clone());
    let dir = tempfile::tempdir().unwrap();
    let mut m = model(spec(Architecture::Alignmif), &g, 19);
    let cfg = TrainConfig {
        checkpoint_interval: 2,
        ..config()
    };
    let report = train(&mut m, &d, &cfg, Some(dir.path())).unwrap();
    assert_eq!(report.checkpoints.len(), 2);
    let first = std::fs::read(dir.path().join("final.bin")).unwrap();
    let loaded = Checkpoint::load(&dir.path().join("final.bin")).unwrap();
    assert_eq!(loaded.step(), 4);
    let again = dir.path().join("again.bin");
    loaded.save(&again).unwrap();
    assert_eq!(std::fs::read(&again).unwrap(), first);
    let rebuilt = loaded.to_model().unwrap();
    assert_eq!(rebuilt.spec, m.spec);
    let log = std::fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
    assert!(log.starts_with(LOG_HEADER));
}

fn final_bytes(d: &Dataset, threads: usize, arch: Architecture) -> Vec<u8> {
    let g = tiny_grid(d.scene.bounds.clone());
    let dir = tempfile::tempdir().unwrap();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap();
    pool.install(|| {
        let mut m = model(spec(arch), &g, 20);
        train(&mut m, d, &config(), Some(dir.path())).unwrap();
    });
    std::fs::read(dir.path().join("final.bin")).unwrap()
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let d = tiny_dataset(Preset::MisalignedStreet);
    for arch in [Architecture::SharedFusion, Architecture::Gaa] {
        let a = final_bytes(&d, 1, arch);
        assert_eq!(a, final_bytes(&d, 1, arch));
        assert_eq!(a, final_bytes(&d, 3, arch));
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let d = tiny_dataset(Preset::AlignedStreet);
    let g = tiny_grid(d.scene.bounds.clone());
    let mut m = model(spec(Architecture::SingleCamera), &g, 21);
    let lidar_only = TrainConfig {
        lambda_c: 0.0,
        ..config()
    };
    assert!(train(&mut m, &d, &lidar_only, None).is_err());
    let none = TrainConfig {
        lambda_c: 0.0,
        lambda_l: 0.0,
        ..config()
    };
    assert!(train(&mut m, &d, &none, None).is_err());
}
