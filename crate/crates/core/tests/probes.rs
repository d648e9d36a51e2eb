//! Probe calibration: the probes must read out known structure from
//! synthetic embeddings before they are trusted on trained models.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use objsep_core::models::{EncoderConfig, Family, ModelPreset, WorldModel};
use objsep_core::probes::{
    random_init_baseline, ranking_accuracy, ranking_from_latents, rsa_alignment,
    rsa_from_latents, separability, separability_from_dataset, similarity_from_deltas,
    slot_decoder_probe, transition_similarity, ProbeDataset, SlotProbeConfig,
};
use objsep_core::worlds::{
    generate_dataset, generate_probe_set, Domain, Episode, EpisodePack, PackManifest,
    WorldState, PACK_FORMAT_VERSION, RESOLUTION,
};

fn tiny_preset(family: Family, domain: Domain, seed: u64) -> ModelPreset {
    let mut p = ModelPreset::default_for(family, domain, seed);
    p.encoder = EncoderConfig {
        in_channels: domain.channels(),
        conv_channels: vec![8, 8],
        conv_strides: vec![2, 2],
        kernel: 3,
        mlp_hidden: vec![32],
    };
    p.latent_dim = 10;
    if let Some(d) = p.dynamics.as_mut() {
        d.mlp_hidden = vec![16, 16];
    }
    if let Some(s) = p.slotted.as_mut() {
        s.slot_dim = 4;
        s.hidden = 8;
    }
    p
}

fn tiny_pack(domain: Domain, episodes: usize, length: usize, seed: u64) -> EpisodePack {
    let eps = generate_dataset(domain, episodes, length, seed).unwrap();
    EpisodePack {
        manifest: PackManifest {
            domain: domain.id().to_string(),
            episodes,
            frames_per_episode: length,
            resolution: RESOLUTION,
            channels: domain.channels(),
            action_dim: domain.action_dim(),
            seed,
            format_version: PACK_FORMAT_VERSION,
        },
        episodes: eps,
    }
}

/// Object `y` writes only coordinates {2y, 2y+1}; both carry the same
/// positive magnitude so same-object deltas are parallel.
fn slotted_deltas(
    pairs: usize,
    classes: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<Vec<f32>>, Vec<usize>, Vec<usize>) {
    let d = 2 * classes;
    let mut x = Vec::with_capacity(pairs);
    let mut obj = Vec::with_capacity(pairs);
    let mut act = Vec::with_capacity(pairs);
    for i in 0..pairs {
        let y = i % classes;
        let mut v = vec![0.0f32; d];
        let mag = rng.gen_range(0.5..1.5);
        v[2 * y] = mag;
        v[2 * y + 1] = mag;
        x.push(v);
        obj.push(y);
        act.push(i % 4);
    }
    (x, obj, act)
}

#[test]
fn synthetic_slotted_embeddings_are_perfectly_separable() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (x, obj, act) = slotted_deltas(300, 5, &mut rng);
    let ds = ProbeDataset::split(x, obj, act, 7).unwrap();
    let acc = separability_from_dataset(&ds, 7).unwrap();
    assert_eq!(acc, 1.0, "got {acc}");
}

#[test]
fn shuffled_labels_score_near_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (x, mut obj, act) = slotted_deltas(300, 5, &mut rng);
    obj.shuffle(&mut rng);
    let ds = ProbeDataset::split(x, obj, act, 8).unwrap();
    let acc = separability_from_dataset(&ds, 8).unwrap();
    assert!((acc - 0.2).abs() <= 0.1, "chance calibration broke: {acc}");
}

#[test]
fn entangled_but_separable_deltas_reach_full_accuracy() {
    // Object 0 changes the first latent marginally and the second greatly;
    // object 1 has the magnitudes swapped. A brute-force check first: the
    // hyperplane x2 = x1 separates the classes by construction.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut x = Vec::new();
    let mut obj = Vec::new();
    for i in 0..300 {
        let r: f32 = rng.gen_range(0.5..1.5);
        let (small, large) = (0.1 * r, 1.0 * r);
        if i % 2 == 0 {
            x.push(vec![small, large]);
            obj.push(0);
        } else {
            x.push(vec![large, small]);
            obj.push(1);
        }
    }
    for (v, &y) in x.iter().zip(&obj) {
        let side = v[1] - v[0];
        assert!(if y == 0 { side > 0.0 } else { side < 0.0 }, "construction not separable");
    }
    let act = vec![0usize; 300];
    let ds = ProbeDataset::split(x, obj, act, 9).unwrap();
    let acc = separability_from_dataset(&ds, 9).unwrap();
    assert_eq!(acc, 1.0, "got {acc}");
}

#[test]
fn separability_is_invariant_to_coordinate_permutation_and_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (x, obj, act) = slotted_deltas(300, 5, &mut rng);

    // Blur the clean construction with noise so accuracy is not pinned at
    // 1.0, which would mask a broken invariance.
    let x: Vec<Vec<f32>> = x
        .into_iter()
        .map(|v| v.into_iter().map(|e| e + rng.gen_range(0.0..0.6)).collect())
        .collect();
    let base_ds = ProbeDataset::split(x.clone(), obj.clone(), act.clone(), 11).unwrap();
    let base = separability_from_dataset(&base_ds, 11).unwrap();

    let d = x[0].len();
    let mut perm: Vec<usize> = (0..d).collect();
    perm.shuffle(&mut rng);
    let scales: Vec<f32> = (0..d).map(|i| 0.25 + 1.75 * (i as f32 / d as f32)).collect();
    let mapped: Vec<Vec<f32>> = x
        .iter()
        .map(|v| perm.iter().map(|&p| v[p] * scales[p]).collect())
        .collect();
    let mapped_ds = ProbeDataset::split(mapped, obj, act, 11).unwrap();
    let mapped_acc = separability_from_dataset(&mapped_ds, 11).unwrap();
    assert_eq!(base, mapped_acc, "base {base} vs mapped {mapped_acc}");
}

#[test]
fn splits_are_stratified_disjoint_and_seeded() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (x, obj, act) = slotted_deltas(100, 5, &mut rng);
    let ds = ProbeDataset::split(x.clone(), obj.clone(), act.clone(), 3).unwrap();
    assert_eq!(ds.train.len() + ds.test.len(), 100);
    for &i in &ds.train {
        assert!(!ds.test.contains(&i));
    }
    for split in [&ds.train, &ds.test] {
        for label in 0..5 {
            assert!(split.iter().any(|&i| ds.object_labels[i] == label));
        }
    }
    let again = ProbeDataset::split(x.clone(), obj.clone(), act.clone(), 3).unwrap();
    assert_eq!(ds.train, again.train);
    let other = ProbeDataset::split(x, obj, act, 4).unwrap();
    assert_ne!(ds.train, other.train, "different seeds must split differently");
}

#[test]
fn too_few_pairs_per_label_are_rejected() {
    let model = WorldModel::init(&tiny_preset(Family::Cwm, Domain::Cubes, 1), 32).unwrap();
    let pairs = generate_probe_set(Domain::Cubes, 25, 5).unwrap();
    assert!(separability(&model, &pairs, 1).is_err());
}

#[test]
fn oracle_predictions_rank_first() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let targets: Vec<Vec<f32>> =
        (0..50).map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let report = ranking_from_latents(&targets, &targets).unwrap();
    assert_eq!(report.hits_at_one, 1.0);
    assert_eq!(report.mrr, 1.0);
}

#[test]
fn constant_predictions_rank_at_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 1000;
    let targets: Vec<Vec<f32>> =
        (0..n).map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let preds = vec![vec![0.0f32; 8]; n];
    let report = ranking_from_latents(&preds, &targets).unwrap();
    assert_eq!(report.hits_at_one, 1.0 / n as f64);
    let expected_mrr: f64 = (1..=n).map(|r| 1.0 / r as f64).sum::<f64>() / n as f64;
    assert!((report.mrr - expected_mrr).abs() < 1e-12);
}

#[test]
fn counting_ranks_match_a_full_argsort_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 200;
    let d = 12;
    let gen = |rng: &mut ChaCha8Rng| -> Vec<Vec<f32>> {
        (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).collect()
    };
    let preds = gen(&mut rng);
    let targets = gen(&mut rng);
    let report = ranking_from_latents(&preds, &targets).unwrap();

    let mut hits = 0usize;
    let mut mrr = 0.0f64;
    for (i, pred) in preds.iter().enumerate() {
        let mut dist: Vec<(f64, usize)> = (0..n)
            .map(|j| {
                let d: f64 = pred
                    .iter()
                    .zip(&targets[j])
                    .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                    .sum();
                (d, j)
            })
            .collect();
        dist.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let rank = dist.iter().position(|&(_, j)| j == i).unwrap() + 1;
        if rank == 1 {
            hits += 1;
        }
        mrr += 1.0 / rank as f64;
    }
    assert_eq!(report.hits_at_one, hits as f64 / n as f64);
    assert_eq!(report.mrr, mrr / n as f64);
}

#[test]
fn rollout_ranking_runs_for_every_dynamics_family() {
    for (family, domain) in [
        (Family::Cwm, Domain::Cubes),
        (Family::Cswm, Domain::Cubes),
        (Family::SeqAe, Domain::Cubes),
        (Family::Cwm, Domain::Physics),
    ] {
        let model = WorldModel::init(&tiny_preset(family, domain, 2), 32).unwrap();
        let pack = tiny_pack(domain, 20, 13, 3);
        for horizon in [1usize, 10] {
            let report = ranking_accuracy(&model, &pack, horizon).unwrap();
            assert_eq!(report.count, 20);
            assert_eq!(report.horizon, horizon);
            assert!(report.hits_at_one >= 0.0 && report.hits_at_one <= 1.0);
            assert!(report.mrr > 0.0 && report.mrr <= 1.0);
        }
    }
}

#[test]
fn ranking_rejects_horizons_longer_than_the_pack() {
    let model = WorldModel::init(&tiny_preset(Family::Cwm, Domain::Cubes, 2), 32).unwrap();
    let pack = tiny_pack(Domain::Cubes, 5, 6, 3);
    assert!(ranking_accuracy(&model, &pack, 6).is_err());
    assert!(ranking_accuracy(&model, &pack, 5).is_ok());
}

#[test]
fn families_without_dynamics_cannot_be_ranked() {
    let model = WorldModel::init(&tiny_preset(Family::Crl, Domain::Cubes, 2), 32).unwrap();
    let pack = tiny_pack(Domain::Cubes, 5, 6, 3);
    assert!(ranking_accuracy(&model, &pack, 1).is_err());
}

#[test]
fn cosine_matrix_has_unit_diagonal_and_zero_for_orthogonal_deltas() {
    let deltas = vec![
        vec![1.0f32, 0.0, 0.0, 0.0],
        vec![0.0, 2.0, 0.0, 0.0],
        vec![0.0, 0.0, 3.0, 3.0],
    ];
    let report = similarity_from_deltas(&deltas, &[0, 1, 2], &[0, 0, 1]).unwrap();
    let n = report.rows();
    assert_eq!(n, 3);
    for i in 0..n {
        assert_eq!(report.matrix[i * n + i], 1.0);
    }
    assert_eq!(report.matrix[1], 0.0);
    assert_eq!(report.matrix[2], 0.0);
}

#[test]
fn synthetic_slotted_deltas_have_unit_intra_object_and_zero_inter_object_similarity() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (x, obj, act) = slotted_deltas(100, 5, &mut rng);
    let report = similarity_from_deltas(&x, &obj, &act).unwrap();
    assert!((report.intra_object_mean - 1.0).abs() < 1e-6, "{}", report.intra_object_mean);

    // Inter-object similarities are exactly zero: disjoint supports.
    let n = report.rows();
    let mut inter = 0.0f64;
    let mut count = 0usize;
    for i in 0..n {
        for j in 0..n {
            if i != j && report.object_labels[i] != report.object_labels[j] {
                inter += report.matrix[i * n + j] as f64;
                count += 1;
            }
        }
    }
    assert_eq!(inter / count as f64, 0.0);

    // The action grouping mixes objects, so it cannot beat the object one.
    assert!(report.intra_object_mean > report.intra_action_mean);
}

#[test]
fn zero_deltas_are_excluded_with_a_count() {
    let deltas = vec![
        vec![1.0f32, 0.0],
        vec![0.0, 0.0],
        vec![0.0, 1.0],
        vec![0.0, 0.0],
    ];
    let report = similarity_from_deltas(&deltas, &[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
    assert_eq!(report.excluded_zero, 2);
    assert_eq!(report.rows(), 2);
    assert_eq!(report.kept, vec![0, 2]);
}

#[test]
fn similarity_orderings_sort_rows_by_their_labels() {
    let deltas = vec![
        vec![1.0f32, 0.0],
        vec![0.5, 0.5],
        vec![0.0, 1.0],
    ];
    let report = similarity_from_deltas(&deltas, &[2, 0, 1], &[0, 2, 1]).unwrap();
    assert_eq!(report.object_order(), vec![1, 2, 0]);
    assert_eq!(report.action_order(), vec![0, 2, 1]);
}

#[test]
fn transition_similarity_runs_on_a_real_model() {
    let model = WorldModel::init(&tiny_preset(Family::Cwm, Domain::Cubes, 3), 32).unwrap();
    let pairs = generate_probe_set(Domain::Cubes, 60, 11).unwrap();
    let report = transition_similarity(&model, &pairs).unwrap();
    assert!(report.intra_object_mean.abs() <= 1.0 + 1e-6);
    assert!(report.intra_action_mean.abs() <= 1.0 + 1e-6);
    assert_eq!(report.rows() + report.excluded_zero, 60);
}

#[test]
fn rsa_of_a_model_with_itself_is_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let z: Vec<Vec<f32>> =
        (0..40).map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let r = rsa_from_latents(&z, &z).unwrap().unwrap();
    assert!((r - 1.0).abs() < 1e-12, "got {r}");
}

#[test]
fn rsa_is_invariant_to_latent_isometries() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let z: Vec<Vec<f32>> =
        (0..40).map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    // Coordinate permutation, sign flips, and a translation are exact
    // isometries in floating point.
    let mapped: Vec<Vec<f32>> = z
        .iter()
        .map(|v| vec![-v[3] + 2.0, v[0] - 1.0, v[5], -v[1], v[4] + 0.5, -v[2]])
        .collect();
    let r = rsa_from_latents(&z, &mapped).unwrap().unwrap();
    assert_eq!(r, 1.0);
}

#[test]
fn rsa_is_symmetric_and_undefined_on_constant_distances() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let za: Vec<Vec<f32>> =
        (0..30).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let zb: Vec<Vec<f32>> =
        (0..30).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let ab = rsa_from_latents(&za, &zb).unwrap().unwrap();
    let ba = rsa_from_latents(&zb, &za).unwrap().unwrap();
    assert_eq!(ab, ba);

    let constant = vec![vec![0.5f32; 5]; 30];
    assert_eq!(rsa_from_latents(&constant, &za).unwrap(), None);
}

#[test]
fn independent_random_encoders_are_not_perfectly_aligned() {
    let a = WorldModel::init(&tiny_preset(Family::Cwm, Domain::Cubes, 21), 32).unwrap();
    let b = WorldModel::init(&tiny_preset(Family::Cwm, Domain::Cubes, 22), 32).unwrap();
    let pack = tiny_pack(Domain::Cubes, 100, 2, 13);
    let frames: Vec<Vec<f32>> =
        pack.episodes.iter().map(|e| e.observation(Domain::Cubes, 0)).collect();
    let r = rsa_alignment(&a, &b, &frames).unwrap().unwrap();
    assert!(r.abs() < 0.999, "independent encoders aligned suspiciously: {r}");
    assert!(r.abs() <= 1.0);

    let self_r = rsa_alignment(&a, &a, &frames).unwrap().unwrap();
    assert!((self_r - 1.0).abs() < 1e-9);
}

#[test]
fn rsa_requires_a_hundred_frames() {
    let a = WorldModel::init(&tiny_preset(Family::Cwm, Domain::Cubes, 21), 32).unwrap();
    let frames = vec![vec![0.0f32; 32 * 32 * 3]; 99];
    assert!(rsa_alignment(&a, &a, &frames).is_err());
}

#[test]
fn random_baseline_is_seed_deterministic() {
    let preset = tiny_preset(Family::Cwm, Domain::Cubes, 0);
    let pairs = generate_probe_set(Domain::Cubes, 100, 14).unwrap();
    let a = random_init_baseline(&preset, 32, &pairs, &[5, 6]).unwrap();
    let b = random_init_baseline(&preset, 32, &pairs, &[5, 6]).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 2);
    assert_eq!(a[0].0, 5);
    for &(_, acc) in &a {
        assert!((0.0..=1.0).contains(&acc));
    }
}

fn constant_color_pack(episodes: usize, length: usize, value: f32) -> EpisodePack {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let eps: Vec<Episode> = (0..episodes)
        .map(|_| Episode {
            frames: vec![vec![value; RESOLUTION * RESOLUTION * 3]; length],
            actions: vec![0; length - 1],
            states: (0..length).map(|_| WorldState::random(Domain::Cubes, &mut rng)).collect(),
        })
        .collect();
    EpisodePack {
        manifest: PackManifest {
            domain: Domain::Cubes.id().to_string(),
            episodes,
            frames_per_episode: length,
            resolution: RESOLUTION,
            channels: 3,
            action_dim: Domain::Cubes.action_dim(),
            seed: 0,
            format_version: PACK_FORMAT_VERSION,
        },
        episodes: eps,
    }
}

#[test]
fn slot_probe_reconstructs_a_constant_color_dataset() {
    let model = WorldModel::init(&tiny_preset(Family::Cwm, Domain::Cubes, 4), 32).unwrap();
    let pack = constant_color_pack(16, 4, 0.4);
    let cfg = SlotProbeConfig {
        slots: 2,
        slot_dim: 4,
        epochs: 120,
        batch_size: 16,
        learning_rate: 3e-3,
        max_frames: 64,
        sample_frames: 4,
        seed: 1,
    };
    let report = slot_decoder_probe(&model, &pack, &cfg).unwrap();
    assert!(report.final_mse < 1e-4, "constant color should be trivial: {}", report.final_mse);
    assert_eq!(report.encoder_hash_before, report.encoder_hash_after);
    assert_eq!(report.samples.len(), 4);
    let s = &report.samples[0];
    assert_eq!(s.image.len(), 32 * 32 * 3);
    assert_eq!(s.slot_images.len(), 2 * 32 * 32 * 3);
    assert_eq!(s.masks.len(), 2 * 32 * 32);
    // Masks stay a valid soft partition after training.
    for px in 0..32 * 32 {
        let total: f32 = (0..2).map(|k| s.masks[k * 32 * 32 + px]).sum();
        assert!((total - 1.0).abs() < 1e-4, "mask sum {total}");
    }
}

#[test]
fn slot_probe_is_seed_deterministic() {
    let model = WorldModel::init(&tiny_preset(Family::Cwm, Domain::Cubes, 4), 32).unwrap();
    let pack = tiny_pack(Domain::Cubes, 6, 3, 15);
    let cfg = SlotProbeConfig {
        slots: 2,
        slot_dim: 4,
        epochs: 2,
        batch_size: 8,
        learning_rate: 1e-3,
        max_frames: 18,
        sample_frames: 2,
        seed: 3,
    };
    let a = slot_decoder_probe(&model, &pack, &cfg).unwrap();
    let b = slot_decoder_probe(&model, &pack, &cfg).unwrap();
    assert_eq!(a.final_mse, b.final_mse);
    assert_eq!(a.epoch_mse, b.epoch_mse);
    assert_eq!(a.samples[0].masks, b.samples[0].masks);
}
