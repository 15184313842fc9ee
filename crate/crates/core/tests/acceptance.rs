//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line
//! with its measured values; the test fails if any criterion fails.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pia::alignment::{filter_vocabulary, label_frames, sample_groups, PhonemeInterval, GROUP_SIZE, VOCABULARY};
use pia::extractors::{LandmarkSet, VisemeCrop, CROP_LEN, EMBEDDING_DIM, LANDMARK_COUNT};
use pia::geometry::{compute_geometry, LipLandmarkIndexSet, MAR_EPSILON};
use pia::harness::metrics::{average_precision, pairwise_auc, roc_auc};
use pia::harness::{evaluate, load_dataset, run_ablation, train, Dataset, EvalReport, TrainConfig};
use pia::identity::{drift_series, drift_stats, DEFAULT_SPIKE_THRESHOLD};
use pia::losses::{arcface_consistency, cross_entropy_with_grad, total_loss, CONSISTENCY_EPSILON, DEFAULT_LAMBDA};
use pia::model::{save_checkpoint, AttentionPool, GroupInput, ModelConfig, Network, VideoInput};
use pia::synthgen::{generate_dataset, generate_video, random_script, DatasetOptions, SynthProfile, FAKE_CATEGORIES};
use pia::extractors::Label;

const DATA_SEED: u64 = 0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(number: usize, title: &str, started: Instant, outcome: &Outcome) {
    // written straight to the stream so the lines show without --nocapture
    let mut err = std::io::stderr();
    let _ = writeln!(
        err,
        "criterion {number} [{}] {title}: {} ({:.1} s)",
        if outcome.pass { "PASS" } else { "FAIL" },
        outcome.detail,
        started.elapsed().as_secs_f64()
    );
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

// ------------------------------------------------------------------ 1

fn criterion_formula_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let idx = LipLandmarkIndexSet::default();
    let mut worst = [0.0f64; 4];
    for _ in 0..1000 {
        // MAR: height / (width + eps) from the two landmark pairs
        let points: Vec<[f32; 2]> = (0..LANDMARK_COUNT).map(|_| [rng.gen(), rng.gen()]).collect();
        let lm = LandmarkSet::detected(points.clone()).unwrap();
        let g = compute_geometry(&lm, &idx, MAR_EPSILON).unwrap();
        let d = |i: usize, j: usize| {
            let (a, b) = (points[i], points[j]);
            ((a[0] as f64 - b[0] as f64).powi(2) + (a[1] as f64 - b[1] as f64).powi(2)).sqrt()
        };
        let mar = d(idx.height_pair.0, idx.height_pair.1) / (d(idx.width_pair.0, idx.width_pair.1) + MAR_EPSILON);
        worst[0] = worst[0].max(rel_err(g.aspect_ratio, mar));

        // drift: L2 and cosine per consecutive pair
        let t = rng.gen_range(2..8);
        let dim = rng.gen_range(1..64);
        let emb: Vec<Vec<f32>> = (0..t).map(|_| (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        let mask: Vec<bool> = (0..t).map(|_| rng.gen_bool(0.8)).collect();
        let s = drift_series(&emb, &mask).unwrap();
        for p in 0..t - 1 {
            let (a, b) = (&emb[p], &emb[p + 1]);
            let mut l2 = 0.0;
            let mut dot = 0.0;
            let mut na = 0.0;
            let mut nb = 0.0;
            for k in 0..dim {
                let (x, y) = (a[k] as f64, b[k] as f64);
                l2 += (x - y) * (x - y);
                dot += x * y;
                na += x * x;
                nb += y * y;
            }
            worst[1] = worst[1].max(rel_err(s.l2[p], l2.sqrt()));
            let cos = dot / (na.sqrt() * nb.sqrt());
            worst[1] = worst[1].max((s.cosine[p] - cos).abs() / cos.abs().max(1e-3));
        }

        // consistency loss: masked mean of 1 - cos over pairs with both bits
        let got = arcface_consistency(&emb, &mask, CONSISTENCY_EPSILON).unwrap();
        let (mut num, mut count) = (0.0, 0.0);
        for p in 0..t - 1 {
            if mask[p] && mask[p + 1] {
                let a: Vec<f64> = emb[p].iter().map(|&x| x as f64).collect();
                let b: Vec<f64> = emb[p + 1].iter().map(|&x| x as f64).collect();
                let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
                let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                num += 1.0 - dot / (na * nb);
                count += 1.0;
            }
        }
        let want = num / (count + CONSISTENCY_EPSILON);
        worst[2] = worst[2].max(if want == 0.0 { got.abs() } else { rel_err(got, want) });

        // total loss
        let (ce, arc, lambda) = (rng.gen_range(0.0..5.0), rng.gen_range(0.0..2.0), rng.gen_range(0.0..1.0));
        worst[3] = worst[3].max(rel_err(total_loss(ce, arc, lambda), ce + lambda * arc));
    }
    Outcome {
        pass: worst.iter().all(|&w| w <= 1e-9),
        detail: format!(
            "max rel err MAR {:.1e}, drift {:.1e}, consistency {:.1e}, total {:.1e} (tol 1e-9)",
            worst[0], worst[1], worst[2], worst[3]
        ),
    }
}

// ------------------------------------------------------------------ 2

fn random_video(rng: &mut ChaCha8Rng, groups: usize) -> VideoInput {
    let symbols = ["p", "o", "s", "æ"];
    let groups: Vec<GroupInput> = (0..groups)
        .map(|g| {
            let crops: Vec<VisemeCrop> = (0..GROUP_SIZE)
                .map(|i| VisemeCrop::new(i, (0..CROP_LEN).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap())
                .collect();
            GroupInput {
                symbol: symbols[g % symbols.len()].into(),
                geometry: (0..GROUP_SIZE * 4).map(|_| rng.gen_range(0.0..1.0)).collect(),
                identity: (0..GROUP_SIZE * EMBEDDING_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                visual: GroupInput::visual_from_crops(&crops).unwrap(),
            }
        })
        .collect();
    let n = groups.len();
    let frames = n * GROUP_SIZE;
    VideoInput {
        video_id: "grad".into(),
        label: Label::Fake,
        category: "lip-sync".into(),
        groups,
        mask: (0..n).map(|i| i != 1).collect(),
        consistency_embeddings: (0..frames)
            .map(|_| (0..EMBEDDING_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect(),
        consistency_mask: vec![true; frames],
    }
}

fn final_loss(net: &Network<f64>, video: &VideoInput, arcface: f64) -> f64 {
    let (logits, _) = net.forward(video).unwrap();
    let (ce, _) = cross_entropy_with_grad(&logits, video.label.class(), 0.1).unwrap();
    total_loss(ce, arcface, DEFAULT_LAMBDA)
}

fn criterion_gradients() -> Outcome {
    let config = ModelConfig {
        d: 16,
        heads: 2,
        channels: [2, 2, 4, 4],
        geometry_hidden: 8,
        identity_hidden: 8,
        head_hidden: 8,
        phoneme_one_hot: true,
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut net = Network::<f64>::new(&config, 3).unwrap();
    let video = random_video(&mut rng, 3);
    let arcface = arcface_consistency(&video.consistency_embeddings, &video.consistency_mask, CONSISTENCY_EPSILON).unwrap();

    net.zero_grad();
    let (logits, cache) = net.forward(&video).unwrap();
    let (_, dlogits) = cross_entropy_with_grad(&logits, video.label.class(), 0.1).unwrap();
    net.backward(&video, &cache, &dlogits);
    let analytic: Vec<Vec<f64>> = net.params().iter().map(|p| p.grad.clone()).collect();

    // every tensor contributes, the rest of the 240 samples are drawn by size
    let sizes: Vec<usize> = net.params().iter().map(|p| p.value.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut picks: Vec<(usize, usize)> = sizes.iter().enumerate().map(|(t, &n)| (t, rng.gen_range(0..n))).collect();
    while picks.len() < 240 {
        let mut k = rng.gen_range(0..total);
        let mut t = 0;
        while k >= sizes[t] {
            k -= sizes[t];
            t += 1;
        }
        picks.push((t, k));
    }

    let h = 1e-5;
    let floor = 1e-6;
    let mut worst = 0.0f64;
    for &(t, k) in &picks {
        let original = net.params()[t].value[k];
        net.params_mut()[t].value[k] = original + h;
        let plus = final_loss(&net, &video, arcface);
        net.params_mut()[t].value[k] = original - h;
        let minus = final_loss(&net, &video, arcface);
        net.params_mut()[t].value[k] = original;
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[t][k];
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(floor));
    }
    Outcome {
        pass: worst <= 1e-4,
        detail: format!(
            "{} parameters over {} tensors, max |a-n|/max(|a|,|n|,1e-6) = {worst:.2e} (tol 1e-4)",
            picks.len(),
            sizes.len()
        ),
    }
}

// ------------------------------------------------------------------ 3

fn criterion_attention() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut sum_err, mut masked_nonzero, mut single_err) = (0.0f64, 0usize, 0.0f64);
    for _ in 0..500 {
        let heads = rng.gen_range(1..5);
        let d = heads * rng.gen_range(1..5);
        let input = rng.gen_range(1..12);
        let t = rng.gen_range(1..10);
        let pool = AttentionPool::<f64>::new(input, d, heads, &mut rng);
        let f: Vec<Vec<f64>> = (0..t).map(|_| (0..input).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        let mut mask: Vec<bool> = (0..t).map(|_| rng.gen_bool(0.7)).collect();
        let keep = rng.gen_range(0..t);
        mask[keep] = true;
        let (z, cache) = pool.forward(&f, &mask).unwrap();
        for row in &cache.alpha {
            sum_err = sum_err.max((row.iter().sum::<f64>() - 1.0).abs());
            masked_nonzero += row.iter().zip(&mask).filter(|(&a, &m)| !m && a != 0.0).count();
        }
        // T = 1: z is the head-mean of the value projection
        let (z1, _) = pool.forward(&f[keep..=keep], &[true]).unwrap();
        let v = pool.value.forward(&f[keep]);
        for j in 0..d {
            let want = (0..heads).map(|h| v[h * d + j]).sum::<f64>() / heads as f64;
            single_err = single_err.max((z1[j] - want).abs());
        }
        assert_eq!(z.len(), d);
    }
    Outcome {
        pass: sum_err <= 1e-6 && masked_nonzero == 0 && single_err <= 1e-12,
        detail: format!(
            "500 shapes: max |sum alpha - 1| {sum_err:.1e}, nonzero masked weights {masked_nonzero}, T=1 max err {single_err:.1e}"
        ),
    }
}

// ------------------------------------------------------------------ 4

fn criterion_alignment() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let symbols: Vec<&str> = VOCABULARY.iter().copied().chain(["ə", "h", "ŋ"]).collect();
    let mut failures = Vec::new();
    for layout in 0..1000 {
        let fps = [25.0, 30.0, 24.0, 50.0][rng.gen_range(0..4)];
        let frame_count = rng.gen_range(1..120);
        // boundaries on exact frame times half the time
        let mut intervals = Vec::new();
        let mut t = rng.gen_range(0..4) as f64 / fps;
        while t < frame_count as f64 / fps {
            let len = if rng.gen_bool(0.5) {
                rng.gen_range(1..10) as f64 / fps
            } else {
                rng.gen_range(0.01..0.4)
            };
            let sym = symbols[rng.gen_range(0..symbols.len())];
            let start = if rng.gen_bool(0.5) { (t * fps).round() / fps } else { t };
            let end = start + len;
            if intervals.last().map_or(true, |p: &PhonemeInterval| p.end <= start) {
                intervals.push(PhonemeInterval::new(sym, start, end).unwrap());
            }
            t = end + if rng.gen_bool(0.6) { 0.0 } else { rng.gen_range(0.0..0.2) };
        }
        let labels = label_frames(&intervals, fps, frame_count).unwrap();
        for lf in &labels {
            let time = lf.frame_index as f64 / fps;
            let holder = intervals.iter().find(|iv| iv.start <= time && time < iv.end);
            if holder.map(|iv| iv.symbol.as_str()) != lf.symbol.as_deref() {
                failures.push(format!("layout {layout}: containment at frame {}", lf.frame_index));
            }
            // half-open: a frame exactly on an end boundary belongs to the next interval or silence
            for iv in &intervals {
                if time == iv.end && lf.symbol.is_some() && holder.is_some_and(|h| std::ptr::eq(h, iv)) {
                    failures.push(format!("layout {layout}: frame {} on a closed end", lf.frame_index));
                }
            }
        }
        let once = filter_vocabulary(&labels);
        if filter_vocabulary(&once) != once || once.iter().any(|f| !VOCABULARY.contains(&f.symbol.as_deref().unwrap())) {
            failures.push(format!("layout {layout}: vocabulary filter not idempotent"));
        }
        // runs of consecutive frames with one symbol
        let mut runs: Vec<(String, usize, usize)> = Vec::new();
        for f in &once {
            let s = f.symbol.clone().unwrap();
            match runs.last_mut() {
                Some((rs, _, last)) if *rs == s && *last + 1 == f.frame_index => *last = f.frame_index,
                _ => runs.push((s, f.frame_index, f.frame_index)),
            }
        }
        let groups = sample_groups(&once, GROUP_SIZE);
        if groups.len() != runs.len() {
            failures.push(format!("layout {layout}: {} groups for {} runs", groups.len(), runs.len()));
            continue;
        }
        for (g, (s, first, last)) in groups.iter().zip(&runs) {
            let ok = g.symbol == *s
                && g.frame_indices.len() == GROUP_SIZE
                && g.frame_indices[0] == *first
                && g.frame_indices[GROUP_SIZE - 1] == *last
                && g.frame_indices.windows(2).all(|w| w[0] <= w[1]);
            if !ok {
                failures.push(format!("layout {layout}: group {:?} for run {first}..={last}", g.frame_indices));
            }
        }
    }
    Outcome {
        pass: failures.is_empty(),
        detail: match failures.first() {
            None => "1000 layouts: containment, half-open ends, idempotent filter, run endpoints".into(),
            Some(f) => format!("{} violations, first: {f}", failures.len()),
        },
    }
}

// ------------------------------------------------------------------ 5

fn criterion_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut mismatches, mut worst) = (0usize, 0.0f64);
    for _ in 0..100 {
        let n = rng.gen_range(2..=200);
        let levels = rng.gen_range(2..50);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64 / levels as f64).collect();
        let auc = roc_auc(&scores, &labels).unwrap();
        if auc != pairwise_auc(&scores, &labels).unwrap() {
            mismatches += 1;
        }
        let ap = average_precision(&scores, &labels).unwrap();
        let transforms: [fn(f64) -> f64; 3] = [|s| (3.0 * s - 1.0).exp(), |s| s.powi(3) + 2.0 * s, |s| 1.0 / (1.0 + (-8.0 * s).exp())];
        for f in transforms {
            let moved: Vec<f64> = scores.iter().map(|&s| f(s)).collect();
            worst = worst.max((roc_auc(&moved, &labels).unwrap() - auc).abs());
            worst = worst.max((average_precision(&moved, &labels).unwrap() - ap).abs());
        }
    }
    Outcome {
        pass: mismatches == 0 && worst <= 1e-12,
        detail: format!("100 score sets: trapezoid != pair count in {mismatches}, max monotone drift {worst:.1e}"),
    }
}

// ------------------------------------------------------------------ 6, 7

fn synthetic_data(dir: &Path) -> (Dataset, Dataset) {
    let paths = generate_dataset(60, 60, DATA_SEED, dir, &DatasetOptions::default()).unwrap();
    (load_dataset(&paths.train, true).unwrap(), load_dataset(&paths.test, true).unwrap())
}

fn summary(r: &EvalReport) -> String {
    format!("AUC {:.1} ACC {:.1} AP {:.1}", r.auc, r.acc, r.ap)
}

// ------------------------------------------------------------------ 8

fn criterion_drift_closure() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut fake_bad, mut real_spikes) = (0usize, 0usize);
    let mut planted = 0;
    for i in 0..100 {
        let script = random_script(&mut rng, 8);
        let profile = if i < 50 {
            SynthProfile::fake(FAKE_CATEGORIES[i % 3], script).unwrap()
        } else {
            SynthProfile::real(script)
        };
        let video = generate_video(&format!("v{i}"), &profile, 25.0, rng.gen()).unwrap();
        let emb: Vec<Vec<f32>> = video.frames.iter().map(|f| f.identity.clone().unwrap().vector).collect();
        let mask: Vec<bool> = video.frames.iter().map(|f| f.valid).collect();
        let stats = drift_stats(&drift_series(&emb, &mask).unwrap(), DEFAULT_SPIKE_THRESHOLD).unwrap();
        if i < 50 {
            planted += profile.jump_count;
            fake_bad += (stats.spike_count != profile.jump_count) as usize;
        } else {
            real_spikes += stats.spike_count;
        }
    }
    Outcome {
        pass: fake_bad == 0 && real_spikes == 0,
        detail: format!("50 fakes ({planted} planted jumps): {fake_bad} miscounted; 50 reals: {real_spikes} spikes"),
    }
}

// ------------------------------------------------------------------ 9

fn reproducible_run(dir: &Path) -> (Vec<u8>, Vec<u8>, Vec<u8>) {
    let paths = generate_dataset(6, 6, 99, dir, &DatasetOptions::default()).unwrap();
    let train_set = load_dataset(&paths.train, true).unwrap();
    let test_set = load_dataset(&paths.test, true).unwrap();
    let tc = TrainConfig {
        epochs: 2,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let outcome = train(&ModelConfig::default(), &train_set, &tc).unwrap();
    let report = evaluate(&outcome.network, &test_set).unwrap();
    (
        std::fs::read(&paths.index).unwrap(),
        save_checkpoint(&outcome.network).unwrap(),
        serde_json::to_vec(&report).unwrap(),
    )
}

fn criterion_reproducibility() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = reproducible_run(a.path());
    let second = reproducible_run(b.path());
    let same = [first.0 == second.0, first.1 == second.1, first.2 == second.2];
    Outcome {
        pass: same.iter().all(|&s| s),
        detail: format!(
            "index identical {}, checkpoint identical {} ({} bytes), report identical {}",
            same[0],
            same[1],
            first.1.len(),
            same[2]
        ),
    }
}

#[test]
fn acceptance_criteria() {
    let mut all = true;
    let mut run = |n: usize, title: &str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        report(n, title, t, &o);
        all &= o.pass;
    };
    run(1, "formula oracles", &mut criterion_formula_oracles);
    run(2, "gradient check", &mut criterion_gradients);
    run(3, "attention invariants", &mut criterion_attention);
    run(4, "alignment invariants", &mut criterion_alignment);
    run(5, "metric correctness", &mut criterion_metrics);

    let dir = tempfile::tempdir().unwrap();
    let (train_set, test_set) = synthetic_data(dir.path());
    let tc = TrainConfig::default();
    let base = ModelConfig::default();
    let mut reports = Vec::new();
    for name in ["full", "w/o_vi", "w/o_geom", "w/o_arc"] {
        let t = Instant::now();
        let r = run_ablation(name, &base, &tc, &train_set, &test_set).unwrap();
        let _ = writeln!(
            std::io::stderr(),
            "  trained {name}: {} ({:.0} s)",
            summary(&r.report),
            t.elapsed().as_secs_f64()
        );
        reports.push((name, r.report));
    }
    let full = &reports[0].1;
    run(6, "synthetic end-to-end", &mut || Outcome {
        pass: full.auc >= 95.0 && full.acc >= 90.0,
        detail: format!(
            "60/60 videos, {} test, 25 epochs: {} (need AUC >= 95, ACC >= 90)",
            full.n_videos,
            summary(full)
        ),
    });
    run(7, "ablation ordering", &mut || {
        let gap = full.auc - reports[1].1.auc;
        let ordered = reports[1..].iter().all(|(_, r)| full.auc >= r.auc);
        let each: Vec<String> = reports.iter().map(|(n, r)| format!("{n} {:.1}", r.auc)).collect();
        Outcome {
            pass: ordered && gap >= 10.0,
            detail: format!("AUC {}; full - w/o_vi = {gap:.1} (need >= 10)", each.join(", ")),
        }
    });
    run(8, "drift closure", &mut criterion_drift_closure);
    run(9, "reproducibility", &mut criterion_reproducibility);
    assert!(all, "at least one acceptance criterion failed; see the lines above");
}
