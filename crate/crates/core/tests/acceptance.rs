//! Acceptance suite: one PASS/FAIL line per criterion. Runs as a plain
//! binary so the lines are always printed; exits non-zero on any failure.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sembeam::beams::{dft_codebook, optimal_beam};
use sembeam::channel::{assemble_channel, ChannelMatrix, PathComponent, RayTraceConfig, SPEED_OF_LIGHT};
use sembeam::dataset::{self, Dataset, DatasetConfig};
use sembeam::featsel::{brute_force_best, forward_selection, is_locally_optimal, sffs, SffsOptions, Subset};
use sembeam::features::{FeatureId, FeatureSet};
use sembeam::pipeline::{self, dataset_split, evaluate_beam, evaluate_blockage, PipelineConfig, TaskKind};
use sembeam::predictor::gradcheck::gradient_check;
use sembeam::predictor::{build_batch, train, ArchConfig, HeadKind, Mode, Network, TrainConfig};
use sembeam::semantics::{concept_index, corrupt_map, pixel_accuracy, M_CON};
use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::time::{Duration, Instant};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn elapsed_ok(start: Instant, limit_s: u64) -> (bool, f64) {
    let t = start.elapsed();
    (t < Duration::from_secs(limit_s), t.as_secs_f64())
}

fn random_channel(rng: &mut ChaCha8Rng, k: usize, n: usize) -> ChannelMatrix {
    let entries = (0..k * n).map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
    ChannelMatrix { subcarriers: k, antennas: n, entries }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let (nt, k, m) = (8, 4, 8);
    let (tx, noise) = (1.0, 0.1);
    let codebook = dft_codebook(nt, m).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let h = random_channel(&mut rng, k, nt);
        let eval = optimal_beam(&h, &codebook, tx, noise).unwrap();
        let mut best = (0, f64::NEG_INFINITY);
        for beam in 0..m {
            let mut total = 0.0;
            for kk in 0..k {
                let mut acc = Complex64::new(0.0, 0.0);
                for n in 0..nt {
                    let w = Complex64::from_polar(1.0 / (nt as f64).sqrt(), -2.0 * PI * (beam * n) as f64 / m as f64);
                    acc += h.entries[kk * nt + n] * w;
                }
                total += (1.0 + tx / noise * acc.norm_sqr()).log2();
            }
            let r = total / k as f64;
            worst = worst.max(rel(r, eval.rates[beam]));
            if r > best.1 {
                best = (beam, r);
            }
        }
        if best.0 != eval.optimal_index {
            mismatches += 1;
        }
    }
    let (fast, secs) = elapsed_ok(start, 5);
    outcome(
        mismatches == 0 && worst <= 1e-12 && fast,
        format!("500 instances, argmax mismatches {mismatches}, worst rate rel err {worst:.2e}, {secs:.2}s"),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let n = 16;
    let cfg = RayTraceConfig { antennas: n, subcarriers: 1, ..RayTraceConfig::default() };
    let codebook = dft_codebook(n, n).unwrap();
    let alpha = 3e-4;
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for m in 0..n {
        // direction cosine on grid point m, wrapped into [-1, 1)
        let mut u = 2.0 * m as f64 / n as f64;
        if u >= 1.0 {
            u -= 2.0;
        }
        let path = PathComponent { alpha, phase: 0.3, delay: 1e-7, azimuth: u.acos(), elevation: PI / 2.0, is_los: true };
        let h = assemble_channel(&[path], &cfg);
        let eval = optimal_beam(&h, &codebook, cfg.tx_power_w, cfg.noise_power_w).unwrap();
        let gain: Complex64 = h.row(0).iter().zip(codebook.beam(m)).map(|(a, b)| a * b).sum();
        let err = (gain.norm() - (n as f64).sqrt() * alpha).abs() / ((n as f64).sqrt() * alpha);
        worst = worst.max(err);
        if eval.optimal_index != m || err > 1e-9 {
            failures.push(m);
        }
    }
    let (fast, secs) = elapsed_ok(start, 1);
    outcome(failures.is_empty() && fast, format!("16 on-grid beams, failing {failures:?}, worst gain rel err {worst:.2e}, {secs:.3}s"))
}

fn tiny_config(seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.dataset.scene.frame_count = 900;
    cfg.dataset.scene.seed = seed;
    cfg.dataset.raytrace.antennas = 8;
    cfg.dataset.raytrace.subcarriers = 4;
    cfg.dataset.resolution = (16, 32);
    cfg.dataset.horizons = vec![1, 6];
    cfg.dataset.sample_stride = 3;
    cfg.train.epochs = 3;
    cfg.train.batch_size = 32;
    cfg.train.seed = seed;
    cfg.selection.epochs = 1;
    cfg.split_block_frames = 30;
    cfg
}

fn criterion_3() -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    for seed in [1, 2, 3] {
        let cfg = tiny_config(seed);
        let ds = dataset::generate(&cfg.dataset).unwrap();
        let split = dataset_split(&ds, &cfg.train, cfg.split_block_frames).unwrap();
        let features = FeatureSet::new([FeatureId::Location, FeatureId::parse("vehicle").unwrap()]);
        let m = ds.config.codebook_size();
        let trained = train(&ds.samples, &ds.beam_labels(), &split.train, &split.val, &features, HeadKind::Beam { classes: m }, &cfg.beam_arch, &cfg.train).unwrap();
        let mut net = trained.net;
        let g: Vec<usize> = (1..=m).collect();
        let e = evaluate_beam(&ds, &mut net, &features, &g, &split, 64).unwrap();
        let mono = |v: &[f64]| v.windows(2).all(|w| w[0] <= w[1]);
        let ok = mono(&e.topg_accuracy) && mono(&e.trr) && e.topg_accuracy[m - 1] == 1.0 && e.trr[m - 1] == 1.0;
        pass &= ok;
        details.push(format!("seed {seed}: n {} top1 {:.3} trr1 {:.3} {}", e.n, e.topg_accuracy[0], e.trr[0], if ok { "ok" } else { "violated" }));
    }
    outcome(pass, details.join("; "))
}

fn criterion_4() -> Outcome {
    let cfg = RayTraceConfig { antennas: 8, subcarriers: 6, ..RayTraceConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let count = rng.random_range(1..=6);
        let paths: Vec<PathComponent> = (0..count)
            .map(|_| PathComponent {
                alpha: rng.random_range(1e-6..1e-3),
                phase: rng.random_range(0.0..2.0 * PI),
                delay: rng.random_range(1e-8..5e-7),
                azimuth: rng.random_range(0.0..2.0 * PI),
                elevation: rng.random_range(0.0..PI),
                is_los: false,
            })
            .collect();
        let h = assemble_channel(&paths, &cfg);
        let d = cfg.spacing();
        let mut diff = 0.0;
        let mut norm = 0.0;
        for k in 0..cfg.subcarriers {
            let f = cfg.subcarrier_hz(k);
            for n in 0..cfg.antennas {
                let mut direct = Complex64::new(0.0, 0.0);
                for p in &paths {
                    let gain = Complex64::from_polar(p.alpha, -2.0 * PI * f * p.delay + p.phase);
                    let u = p.elevation.sin() * p.azimuth.cos();
                    let array = Complex64::from_polar(1.0, 2.0 * PI * d * f / SPEED_OF_LIGHT * n as f64 * u);
                    direct += gain * array;
                }
                diff += (h.entries[k * cfg.antennas + n] - direct).norm_sqr();
                norm += direct.norm_sqr();
            }
        }
        worst = worst.max((diff / norm).sqrt());
    }
    let p = PathComponent { alpha: 1e-4, phase: 0.7, delay: 2e-7, azimuth: 1.1, elevation: 1.2, is_los: true };
    let q = PathComponent { phase: 0.7 + PI, is_los: false, ..p };
    let norm = assemble_channel(&[p, q], &cfg).frobenius();
    outcome(worst <= 1e-12 && norm < 1e-12, format!("100 path sets, worst rel err {worst:.2e}; destructive pair norm {norm:.2e}"))
}

fn criterion_5(ds: &Dataset) -> Outcome {
    let start = Instant::now();
    let features = FeatureSet::new([FeatureId::Location, FeatureId::parse("sidewalk").unwrap(), FeatureId::parse("vehicle").unwrap()]);
    let idx: Vec<usize> = (0..6).map(|i| i * 37 % ds.samples.len()).collect();
    let mut details = Vec::new();
    let mut pass = true;
    for (head, arch, labels) in [
        (HeadKind::Beam { classes: 16 }, ArchConfig::desk_beam(), idx.iter().map(|&i| usize::from(ds.samples[i].beam_label)).collect::<Vec<_>>()),
        (HeadKind::Blockage, ArchConfig::desk_blockage(), vec![0, 1, 1, 0, 1, 0]),
    ] {
        let (loc, masks) = build_batch::<f64>(&ds.samples, &idx, &features, arch.input_pool).unwrap();
        let layout = sembeam::predictor::input::layout_for(&ds.samples[0], &features, arch.input_pool).unwrap();
        let mut net = Network::<f64>::new(&arch, head, layout, 5).unwrap();
        for _ in 0..3 {
            net.forward(&loc, &masks, Mode::Train, None).unwrap();
        }
        for mode in [Mode::Eval, Mode::TrainFrozen] {
            let r = gradient_check(&net, &loc, &masks, &labels, mode, 120, 9).unwrap();
            pass &= r.checked >= 100 && r.max_rel_error < 1e-4;
            let name = if matches!(head, HeadKind::Blockage) { "blockage" } else { "beam" };
            details.push(format!("{name} {mode:?}: {} params, max rel err {:.2e}", r.checked, r.max_rel_error));
        }
    }
    let (fast, secs) = elapsed_ok(start, 60);
    outcome(pass && fast, format!("{}; {secs:.1}s", details.join("; ")))
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let universal: Subset<u8> = (0..6).collect();
    let mut matches = 0;
    let mut pass = true;
    for table_seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + table_seed);
        let table: Vec<f64> = (0..64).map(|_| rng.random::<f64>()).collect();
        let score = |s: &Subset<u8>| table[s.iter().fold(0usize, |acc, &f| acc | 1 << f)];
        let opts = SffsOptions::default();
        let out = sffs(&universal, score, &opts).unwrap();
        let mut eval = score;
        let local = is_locally_optimal(&out.selected, &universal, &mut eval, &BTreeSet::new(), None).unwrap();
        let fwd = forward_selection(&universal, score, &BTreeSet::new(), None).unwrap();
        let (best, best_acc) = brute_force_best(&universal, score, &BTreeSet::new(), None).unwrap();
        pass &= local && out.accuracy >= fwd.accuracy;
        if out.selected == best || out.accuracy == best_acc {
            matches += 1;
        }
    }
    let (fast, secs) = elapsed_ok(start, 10);
    outcome(pass && fast, format!("20 tables: local optimality and dominance {}, brute-force matches {matches}/20 (reported), {secs:.2}s", if pass { "hold" } else { "violated" }))
}

fn planted_config() -> DatasetConfig {
    let mut c = DatasetConfig::default();
    c.raytrace.antennas = 16;
    c.raytrace.subcarriers = 16;
    c.scene.frame_count = 16000;
    c.sample_stride = 5;
    c
}

fn criterion_7(ds: &Dataset, secs_generate: f64) -> Outcome {
    let start = Instant::now();
    let cfg = PipelineConfig { dataset: ds.config.clone(), ..PipelineConfig::default() };
    let split = dataset_split(ds, &cfg.train, cfg.split_block_frames).unwrap();
    let features = FeatureSet::new([FeatureId::Location, FeatureId::parse("vehicle").unwrap()]);
    let beam = train(&ds.samples, &ds.beam_labels(), &split.train, &split.val, &features, HeadKind::Beam { classes: 16 }, &cfg.beam_arch, &cfg.train).unwrap();
    let mut net = beam.net;
    let e = evaluate_beam(ds, &mut net, &features, &[1, 5], &split, 128).unwrap();
    let (top1, top5) = (e.topg_accuracy[0], e.topg_accuracy[1]);
    let h1 = ds.config.horizons[0];
    let labels = ds.blockage_labels(0);
    let block = train(&ds.samples, &labels, &split.train, &split.val, &features, HeadKind::Blockage, &cfg.blockage_arch, &cfg.train).unwrap();
    let mut bnet = block.net;
    let b = evaluate_blockage(ds, &mut bnet, &features, h1, &split, 128).unwrap();
    let secs = secs_generate + start.elapsed().as_secs_f64();
    let beam_ok = top1 >= 3.0 / 16.0 && top5 > top1;
    let block_ok = b.accuracy >= b.majority_baseline + 0.05;
    outcome(
        beam_ok && block_ok && secs < 900.0,
        format!(
            "{} samples; Top-1 {top1:.3} (need >= 0.1875), Top-5 {top5:.3}; blockage h{h1} {:.3} vs majority {:.3} (need +0.05); {secs:.0}s",
            ds.samples.len(),
            b.accuracy,
            b.majority_baseline
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut acc1 = Vec::new();
    let mut acc36 = Vec::new();
    for seed in [0, 1, 2] {
        let mut c = DatasetConfig::default();
        c.scene.seed = seed;
        c.scene.frame_count = 8000;
        c.sample_stride = 5;
        c.store_channels = false;
        let ds = dataset::generate(&c).unwrap();
        let cfg = PipelineConfig { dataset: c, ..PipelineConfig::default() };
        let train_cfg = TrainConfig { seed, ..cfg.train.clone() };
        let split = dataset_split(&ds, &train_cfg, cfg.split_block_frames).unwrap();
        let features = FeatureSet::new([FeatureId::Location, FeatureId::parse("vehicle").unwrap()]);
        for (h, out) in [(1usize, &mut acc1), (36, &mut acc36)] {
            let hi = ds.horizon_index(h).unwrap();
            let t = train(&ds.samples, &ds.blockage_labels(hi), &split.train, &split.val, &features, HeadKind::Blockage, &cfg.blockage_arch, &train_cfg).unwrap();
            let mut net = t.net;
            out.push(evaluate_blockage(&ds, &mut net, &features, h, &split, 128).unwrap().accuracy);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (m1, m36) = (mean(&acc1), mean(&acc36));
    outcome(m1 >= m36, format!("h1 {acc1:.3?} mean {m1:.3}; h36 {acc36:.3?} mean {m36:.3}"))
}

fn criterion_9(ds: &Dataset) -> Outcome {
    let mut planted = ds.clone();
    planted.plant_beam_labels(concept_index("vehicle").unwrap());
    let mut cfg = PipelineConfig { dataset: planted.config.clone(), ..PipelineConfig::default() };
    cfg.train.batch_size = 32;
    cfg.selection.epochs = 8;
    cfg.selection.tolerance = 0.01;
    cfg.selection.beam_arch = Some(ArchConfig { input_pool: 8, ..ArchConfig::desk_beam() });
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let sel = pipeline::cmd_select(&planted, TaskKind::Beam, &cfg, dir.path()).unwrap();
    let chosen = &sel.features.0;
    let needed = [FeatureId::Location, FeatureId::parse("vehicle").unwrap()];
    let zero = ["sky", "water", "bridge"].map(|n| FeatureId::parse(n).unwrap());
    let absent = pipeline::absent_concepts(&planted);
    let has_needed = needed.iter().all(|f| chosen.contains(f));
    let no_zero = zero.iter().all(|f| !chosen.contains(f));
    let zero_masks = zero.iter().all(|f| absent.contains(f));
    outcome(
        has_needed && no_zero && zero_masks,
        format!(
            "selected {} (val acc {:.3}, {} evaluations, {:.0}s); sky/water/bridge all-zero {zero_masks}",
            sel.features,
            sel.accuracy,
            sel.evaluations,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn criterion_10(ds: &Dataset) -> Outcome {
    let cfg = tiny_config(7);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline::run_all(&cfg, a.path()).unwrap();
    pipeline::run_all(&cfg, b.path()).unwrap();
    let ra = std::fs::read(a.path().join("report.json")).unwrap();
    let rb = std::fs::read(b.path().join("report.json")).unwrap();
    let same_report = ra == rb;

    let dir = tempfile::tempdir().unwrap();
    dataset::write(ds, dir.path()).unwrap();
    let back = dataset::read(dir.path()).unwrap();
    let round_trip = &back == ds;

    let maps: Vec<_> = ds.samples.iter().take(40).flat_map(|s| s.maps.clone()).collect();
    let mut rng = sembeam::rng::stream(10, "acceptance/corrupt");
    let noisy: Vec<_> = maps.iter().map(|m| corrupt_map(m, 0.1, &mut rng).unwrap()).collect();
    let acc = pixel_accuracy(&noisy, &maps).unwrap();
    let expected = 1.0 - 0.1 + 0.1 / M_CON as f64;
    let pixels = maps.iter().map(|m| m.labels.len()).sum::<usize>() as f64;
    let sigma = (expected * (1.0 - expected) / pixels).sqrt();
    let within = (acc - expected).abs() <= 3.0 * sigma;
    outcome(
        same_report && round_trip && within,
        format!("report identical {same_report}; container round trip {round_trip}; pixel accuracy {acc:.5} vs {expected:.3} +- {:.5}", 3.0 * sigma),
    )
}

fn main() {
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut record = |n: usize, o: Outcome| {
        println!("criterion {n:2}: {} | {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, o));
    };
    record(1, criterion_1());
    record(2, criterion_2());
    record(3, criterion_3());
    record(4, criterion_4());
    let start = Instant::now();
    let planted = dataset::generate(&planted_config()).expect("planted dataset");
    let secs_generate = start.elapsed().as_secs_f64();
    record(5, criterion_5(&planted));
    record(6, criterion_6());
    record(7, criterion_7(&planted, secs_generate));
    record(8, criterion_8());
    record(9, criterion_9(&planted));
    record(10, criterion_10(&planted));
    let failed: Vec<usize> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    println!("acceptance: {} of {} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
