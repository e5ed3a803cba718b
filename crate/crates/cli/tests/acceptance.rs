//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any fails. Every oracle here is computed independently of the library.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trapline_core::annotations::{split_ids, RecordReader, RecordWriter};
use trapline_core::domain::{BoundingBox, Detection, SpeciesLabel};
use trapline_core::harness::{read_trial_records, required_sample_size, Confidence};
use trapline_core::metrics::{
    average_precision, average_recall_at_k, build_confusion, classification_metrics, iou, percent_half_up,
    GroundTruth, ImageEval,
};
use trapline_service::inference::{
    apply_threshold, BackendConfig, ClassifiedImage, HttpBackend, MockBackend, MockServer,
};
use trapline_service::ingest::{ingest_directory, BoundedQueue, IngestEvent};
use trapline_service::pipeline::Pipeline;
use trapline_service::store::{DetectionFilter, EventMeta, Store, TimeRange};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

// ---------------------------------------------------------------- confusion replay

const TRIAL_LABELS: [&str; 9] = [
    "Carduelis carduelis",
    "Chloris chloris",
    "Columba palumbus",
    "Cyanistes caeruleus",
    "Erithacus rubecula",
    "Garrulus glandarius",
    "Blank",
    "Passer domesticus",
    "Pica pica",
];

const TRIAL_MATRIX: [[u64; 9]; 9] = [
    [63, 11, 0, 8, 0, 4, 0, 0, 1],
    [1, 74, 0, 3, 0, 0, 0, 0, 0],
    [4, 0, 552, 0, 0, 22, 0, 8, 28],
    [14, 25, 5, 187, 0, 4, 0, 1, 5],
    [1, 28, 1, 0, 232, 2, 0, 8, 0],
    [0, 0, 0, 1, 0, 14, 0, 0, 0],
    [0, 2, 9, 3, 5, 0, 218, 11, 0],
    [13, 14, 7, 0, 4, 11, 0, 345, 0],
    [0, 0, 4, 0, 0, 1, 0, 0, 49],
];

fn confusion_replay() -> Outcome {
    let path = fixtures().join("trial_pairs.jsonl");
    let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;

    // independent tally straight from the JSON
    let mut raw = [[0u64; 9]; 9];
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let pos = |key: &str| TRIAL_LABELS.iter().position(|l| Some(*l) == v[key].as_str());
        let (a, p) = (pos("true_label").ok_or("unknown label")?, pos("predicted_label").ok_or("unknown label")?);
        raw[a][p] += 1;
    }
    ensure!(raw == TRIAL_MATRIX, "fixture does not transcribe the matrix");

    let records = read_trial_records(text.as_bytes()).map_err(|e| e.to_string())?;
    let labels: Vec<SpeciesLabel> = TRIAL_LABELS
        .iter()
        .map(|l| if *l == "Blank" { SpeciesLabel::blank() } else { SpeciesLabel::species(l).unwrap() })
        .collect();
    let m = build_confusion(
        labels.clone(),
        records.iter().map(|r| (&r.true_label, &r.predicted_label)),
    )
    .map_err(|e| e.to_string())?;
    for i in 0..9 {
        let want: u64 = raw[i].iter().sum();
        ensure!(m.row_sum(i) == want, "row {} sums to {}, fixture has {}", TRIAL_LABELS[i], m.row_sum(i), want);
    }
    ensure!(m.total() == 2003, "total {}", m.total());

    let counts = m.one_vs_rest_counts(&SpeciesLabel::blank()).map_err(|e| e.to_string())?;
    ensure!(counts.true_pos == 218, "blank tp {}", counts.true_pos);
    let metrics = classification_metrics(&counts);
    let precision = percent_half_up(metrics.precision.ok_or("precision undefined")?);
    let sensitivity = percent_half_up(metrics.sensitivity.ok_or("sensitivity undefined")?);
    const TOL_PP: f64 = 0.01;
    ensure!((precision - 100.00).abs() <= TOL_PP, "precision {precision}");
    ensure!((sensitivity - 87.90).abs() <= TOL_PP, "sensitivity {sensitivity}");
    // the same figures by hand: 218 / 218 and 218 / 248, half-up to 2 dp
    let by_hand = |num: u64, den: u64| ((num * 100_000 / den + 5) / 10) as f64 / 100.0;
    ensure!((by_hand(218, 218) - precision).abs() <= TOL_PP, "precision disagrees with integer oracle");
    ensure!((by_hand(218, 248) - sensitivity).abs() <= TOL_PP, "sensitivity disagrees with integer oracle");
    Ok(format!("tp=218 precision={precision:.2}% sensitivity={sensitivity:.2}% rows match"))
}

// ---------------------------------------------------------------- counts

fn count_conservation() -> Outcome {
    const DETECTION_IMAGES: usize = 14_740;
    const BLANK_IMAGES: usize = 28_233;
    let store = Store::in_memory(0.5).map_err(|e| e.to_string())?;
    let t0 = Utc.with_ymd_and_hms(2021, 3, 5, 0, 0, 0).unwrap();
    let species = ["Pica pica", "Columba palumbus", "Erithacus rubecula"];
    let items: Vec<(ClassifiedImage, EventMeta)> = (0..DETECTION_IMAGES + BLANK_IMAGES)
        .map(|i| {
            let blank = i >= DETECTION_IMAGES;
            let detections = if blank {
                vec![]
            } else {
                let label = SpeciesLabel::species(species[i % 3]).unwrap();
                vec![Detection::new(label, 0.9, BoundingBox::try_new(1.0, 1.0, 50.0, 50.0).unwrap()).unwrap()]
            };
            let at = t0 + chrono::Duration::minutes(i as i64);
            (
                ClassifiedImage {
                    event_id: format!("ev-{i:06}"),
                    camera_id: format!("CAM-{:02}", i % 8),
                    captured_at: at,
                    content_hash: format!("{i:064x}"),
                    detections,
                    is_blank: blank,
                    latency_ms: 0,
                },
                EventMeta { received_at: at, flags: vec![] },
            )
        })
        .collect();
    let out = store.record_batch(items.iter().map(|(c, m)| (c, m))).map_err(|e| e.to_string())?;
    ensure!(out.stored == items.len(), "stored {}", out.stored);
    let counts = store.species_counts(&TimeRange::all(), None).map_err(|e| e.to_string())?;
    ensure!(counts.total_images == 42_973, "total {}", counts.total_images);
    ensure!(counts.detection_images == DETECTION_IMAGES as u64, "detection images {}", counts.detection_images);
    ensure!(counts.blank_images == BLANK_IMAGES as u64, "blank images {}", counts.blank_images);
    Ok(format!("total_images={}", counts.total_images))
}

// ---------------------------------------------------------------- metric oracles

fn oracle_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let w = a[2].min(b[2]) - a[0].max(b[0]);
    let h = a[3].min(b[3]) - a[1].max(b[1]);
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    let inter = w * h;
    inter / ((a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter)
}

#[derive(Clone)]
struct Obj {
    class: usize,
    score: f64,
    b: [f64; 4],
}

struct Scene {
    images: Vec<(Vec<Obj>, Vec<Obj>)>, // (truths, detections)
}

fn random_scene(rng: &mut ChaCha8Rng) -> Scene {
    let n_images = rng.gen_range(1..=5);
    let mut scores: Vec<f64> = (1..=200).map(|s| s as f64 / 201.0).collect();
    scores.shuffle(rng);
    let mut next = scores.into_iter();
    let images = (0..n_images)
        .map(|_| {
            let truths: Vec<Obj> = (0..rng.gen_range(0..=4))
                .map(|_| {
                    let x = rng.gen_range(0.0..200.0);
                    let y = rng.gen_range(0.0..200.0);
                    let w = rng.gen_range(10.0..80.0);
                    let h = rng.gen_range(10.0..80.0);
                    Obj { class: rng.gen_range(0..2), score: 0.0, b: [x, y, x + w, y + h] }
                })
                .collect();
            let dets: Vec<Obj> = (0..rng.gen_range(0..=4))
                .map(|_| {
                    let (class, b) = if !truths.is_empty() && rng.gen_bool(0.75) {
                        let t = &truths[rng.gen_range(0..truths.len())];
                        let j = |r: &mut ChaCha8Rng| r.gen_range(-12.0..12.0);
                        let class = if rng.gen_bool(0.85) { t.class } else { 1 - t.class };
                        let mut b = [t.b[0] + j(rng), t.b[1] + j(rng), t.b[2] + j(rng), t.b[3] + j(rng)];
                        if b[2] <= b[0] + 1.0 {
                            b[2] = b[0] + 1.0;
                        }
                        if b[3] <= b[1] + 1.0 {
                            b[3] = b[1] + 1.0;
                        }
                        (class, b)
                    } else {
                        let x = rng.gen_range(0.0..200.0);
                        let y = rng.gen_range(0.0..200.0);
                        (rng.gen_range(0..2), [x, y, x + rng.gen_range(5.0..60.0), y + rng.gen_range(5.0..60.0)])
                    };
                    Obj { class, score: next.next().unwrap(), b }
                })
                .collect();
            (truths, dets)
        })
        .collect();
    Scene { images }
}

fn class_label(c: usize) -> SpeciesLabel {
    SpeciesLabel::species(["Pica pica", "Garrulus glandarius"][c]).unwrap()
}

fn to_evals(scene: &Scene) -> Vec<ImageEval> {
    scene
        .images
        .iter()
        .enumerate()
        .map(|(i, (truths, dets))| ImageEval {
            image_id: format!("img-{i}"),
            truths: truths
                .iter()
                .map(|t| GroundTruth { label: class_label(t.class), bbox: BoundingBox::from(t.b) })
                .collect(),
            detections: dets
                .iter()
                .map(|d| Detection::new(class_label(d.class), d.score, BoundingBox::from(d.b)).unwrap())
                .collect(),
        })
        .collect()
}

/// Greedy matching of one image's detections (already restricted to one class)
/// in descending score; returns which detections matched.
fn oracle_match(dets: &[&Obj], truths: &[&Obj], thr: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap());
    let mut taken = vec![false; truths.len()];
    let mut hit = vec![false; dets.len()];
    for d in order {
        let mut best: Option<usize> = None;
        let mut best_iou = -1.0;
        for (t, truth) in truths.iter().enumerate() {
            let o = oracle_iou(dets[d].b, truth.b);
            if !taken[t] && o >= thr && o > best_iou {
                best = Some(t);
                best_iou = o;
            }
        }
        if let Some(t) = best {
            taken[t] = true;
            hit[d] = true;
        }
    }
    hit
}

/// For every recall level, the best precision over all cut-offs reaching it.
fn oracle_ap(scene: &Scene, class: usize, thr: f64) -> Option<f64> {
    let mut ranked: Vec<(f64, bool)> = Vec::new();
    let mut positives = 0usize;
    for (truths, dets) in &scene.images {
        let t: Vec<&Obj> = truths.iter().filter(|o| o.class == class).collect();
        let d: Vec<&Obj> = dets.iter().filter(|o| o.class == class).collect();
        positives += t.len();
        for (obj, hit) in d.iter().zip(oracle_match(&d, &t, thr)) {
            ranked.push((obj.score, hit));
        }
    }
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    if positives == 0 {
        return if ranked.is_empty() { None } else { Some(0.0) };
    }
    let mut total = 0.0;
    for r in 0..=100usize {
        let mut best = 0.0f64;
        for cut in 1..=ranked.len() {
            let tp = ranked[..cut].iter().filter(|x| x.1).count();
            if tp * 100 >= r * positives {
                best = best.max(tp as f64 / cut as f64);
            }
        }
        total += best;
    }
    Some(total / 101.0)
}

fn oracle_ar(scene: &Scene, k: usize) -> Option<f64> {
    let capped: Vec<(Vec<&Obj>, Vec<&Obj>)> = scene
        .images
        .iter()
        .map(|(truths, dets)| {
            let mut d: Vec<&Obj> = dets.iter().collect();
            d.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
            d.truncate(k);
            (truths.iter().collect(), d)
        })
        .collect();
    let mut per_class = Vec::new();
    for class in 0..2 {
        let positives: usize = capped.iter().map(|(t, _)| t.iter().filter(|o| o.class == class).count()).sum();
        if positives == 0 {
            continue;
        }
        let mut sum = 0.0;
        for step in 0..10 {
            let thr = (50 + 5 * step) as f64 / 100.0;
            let mut found = 0usize;
            for (truths, dets) in &capped {
                let t: Vec<&Obj> = truths.iter().copied().filter(|o| o.class == class).collect();
                let d: Vec<&Obj> = dets.iter().copied().filter(|o| o.class == class).collect();
                found += oracle_match(&d, &t, thr).iter().filter(|h| **h).count();
            }
            sum += found as f64 / positives as f64;
        }
        per_class.push(sum / 10.0);
    }
    if per_class.is_empty() {
        None
    } else {
        Some(per_class.iter().sum::<f64>() / per_class.len() as f64)
    }
}

fn close(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => (x - y).abs() <= tol,
        _ => false,
    }
}

fn metric_oracles() -> Outcome {
    const SCENES: usize = 200;
    const TOL: f64 = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(0x7a11);
    let mut compared = 0;
    let mut nonzero = 0;
    for s in 0..SCENES {
        let scene = random_scene(&mut rng);
        let evals = to_evals(&scene);
        for class in 0..2 {
            for step in 0..10 {
                let thr = (50 + 5 * step) as f64 / 100.0;
                let got = average_precision(&class_label(class), &evals, thr);
                let want = oracle_ap(&scene, class, thr);
                ensure!(close(got, want, TOL), "scene {s} class {class} iou {thr}: AP {got:?} vs oracle {want:?}");
                compared += 1;
                nonzero += want.map_or(0, |v| (v > 0.0) as usize);
            }
        }
        for k in [1, 10, 100] {
            let got = average_recall_at_k(&evals, k, None);
            let want = oracle_ar(&scene, k);
            ensure!(close(got, want, TOL), "scene {s} AR@{k}: {got:?} vs oracle {want:?}");
            compared += 1;
        }
    }
    ensure!(nonzero > 100, "scenes too degenerate: only {nonzero} non-zero APs");
    Ok(format!("{SCENES} scenes, {compared} comparisons within {TOL:e}"))
}

// ---------------------------------------------------------------- iou

fn iou_properties() -> Outcome {
    const TOL: f64 = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let rand_box = |r: &mut ChaCha8Rng| {
        let x = r.gen_range(0.0..200.0);
        let y = r.gen_range(0.0..200.0);
        BoundingBox::try_new(x, y, x + r.gen_range(0.5..50.0), y + r.gen_range(0.5..50.0)).unwrap()
    };
    for i in 0..1000 {
        let a = rand_box(&mut rng);
        let b = rand_box(&mut rng);
        let ab = iou(&a, &b);
        ensure!((ab - iou(&b, &a)).abs() <= TOL, "pair {i}: not symmetric");
        ensure!((0.0..=1.0).contains(&ab), "pair {i}: out of range {ab}");
        ensure!((iou(&a, &a) - 1.0).abs() <= TOL, "pair {i}: identity {}", iou(&a, &a));
        let (dx, dy) = (rng.gen_range(0.0..500.0), rng.gen_range(0.0..500.0));
        let moved = iou(&a.translate(dx, dy), &b.translate(dx, dy));
        ensure!((moved - ab).abs() <= 1e-9, "pair {i}: translation changed {ab} to {moved}");
        let far = b.translate(a.xmax - b.xmin + rng.gen_range(0.0..10.0), 0.0);
        ensure!(iou(&a, &far) == 0.0, "pair {i}: disjoint overlap {}", iou(&a, &far));
        ensure!((ab - oracle_iou(a.as_array(), b.as_array())).abs() <= TOL, "pair {i}: disagrees with oracle");
    }
    let v = iou(&BoundingBox::from([0.0, 0.0, 10.0, 10.0]), &BoundingBox::from([5.0, 5.0, 15.0, 15.0]));
    ensure!((v - 1.0 / 7.0).abs() <= TOL, "1/7 case gave {v}");
    Ok("1000 pairs; (0,0,10,10)/(5,5,15,15) = 1/7".into())
}

// ---------------------------------------------------------------- threshold

fn threshold_rule() -> Outcome {
    let floor = BackendConfig::default().confidence_floor;
    ensure!(floor == 0.5, "default floor {floor}");
    let bird = |s: f64| {
        Detection::new(SpeciesLabel::species("Pica pica").unwrap(), s, BoundingBox::from([0.0, 0.0, 5.0, 5.0])).unwrap()
    };
    let (kept, blank) = apply_threshold(&[bird(0.50)], floor);
    ensure!(kept.is_empty() && blank, "0.50 was kept");
    let (kept, blank) = apply_threshold(&[bird(0.51)], floor);
    ensure!(kept.len() == 1 && !blank, "0.51 was dropped");

    let mut rng = ChaCha8Rng::seed_from_u64(51);
    for i in 0..1000 {
        let set: Vec<Detection> = (0..rng.gen_range(0..8)).map(|_| bird(rng.gen_range(0.0..=1.0))).collect();
        let lo = rng.gen_range(0.0..1.0);
        let hi = rng.gen_range(lo..=1.0);
        let (k_lo, b_lo) = apply_threshold(&set, lo);
        let (k_hi, b_hi) = apply_threshold(&set, hi);
        ensure!(k_hi.len() <= k_lo.len(), "set {i}: raising the floor kept more");
        ensure!(k_hi.iter().all(|d| k_lo.contains(d)), "set {i}: kept set not nested");
        ensure!(!b_lo || b_hi, "set {i}: blank at {lo} but not at {hi}");
        ensure!(k_lo.len() == set.iter().filter(|d| d.score > lo).count(), "set {i}: wrong kept count");
    }
    Ok("0.50 blank, 0.51 kept; 1000 monotone sets".into())
}

// ---------------------------------------------------------------- split

fn split_replay() -> Outcome {
    let expect_train = |n: usize| (n * 9 + 5) / 10;
    let ids: Vec<String> = (0..32_981).map(|i| format!("tag-{i}")).collect();
    let s = split_ids(&ids, 0.9, 2021).map_err(|e| e.to_string())?;
    ensure!(s.train.len() == 29_683 && s.validation.len() == 3_298, "{}/{}", s.train.len(), s.validation.len());
    ensure!(expect_train(32_981) == 29_683, "integer oracle disagrees");

    let mut rng = ChaCha8Rng::seed_from_u64(90);
    for _ in 0..100 {
        let n = rng.gen_range(20..3000);
        let ids: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
        let seed = rng.gen();
        let s = split_ids(&ids, 0.9, seed).map_err(|e| e.to_string())?;
        ensure!(s.train.len() == expect_train(n), "n={n}: train {}", s.train.len());
        let train: BTreeSet<&String> = s.train.iter().collect();
        let val: BTreeSet<&String> = s.validation.iter().collect();
        ensure!(train.is_disjoint(&val), "n={n}: overlap");
        ensure!(train.len() + val.len() == n, "n={n}: duplicates or loss");
        ensure!(train.union(&val).count() == n && ids.iter().all(|i| train.contains(i) || val.contains(i)), "n={n}: not a partition");
    }
    Ok("32981 -> 29683/3298; 100 random partitions".into())
}

// ---------------------------------------------------------------- records

fn crc32c_bitwise(bytes: &[u8]) -> u32 {
    let mut crc = !0u32;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            crc = if crc & 1 == 1 { (crc >> 1) ^ 0x82F6_3B78 } else { crc >> 1 };
        }
    }
    !crc
}

fn masked(bytes: &[u8]) -> u32 {
    crc32c_bitwise(bytes).rotate_right(15).wrapping_add(0xa282_ead8)
}

fn record_container() -> Outcome {
    ensure!(crc32c_bitwise(b"123456789") == 0xE306_9283, "reference crc self-check failed");

    let mut w = RecordWriter::new(Vec::new());
    w.write_record(&[]).map_err(|e| e.to_string())?;
    let empty = w.into_inner();
    ensure!(empty.len() == 16, "empty record is {} bytes", empty.len());
    let mut want = Vec::new();
    want.extend_from_slice(&0u64.to_le_bytes());
    want.extend_from_slice(&masked(&0u64.to_le_bytes()).to_le_bytes());
    want.extend_from_slice(&masked(&[]).to_le_bytes());
    ensure!(empty == want, "empty record bytes {:02x?} != {:02x?}", empty, want);

    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let mut corruptions = 0;
    for round in 0..40 {
        let payloads: Vec<Vec<u8>> = (0..rng.gen_range(1..5))
            .map(|_| (0..rng.gen_range(0..300)).map(|_| rng.gen()).collect())
            .collect();
        let mut w = RecordWriter::new(Vec::new());
        for p in &payloads {
            w.write_record(p).map_err(|e| e.to_string())?;
        }
        let bytes = w.into_inner();
        // reference encoding built by hand
        let mut manual = Vec::new();
        for p in &payloads {
            let len = (p.len() as u64).to_le_bytes();
            manual.extend_from_slice(&len);
            manual.extend_from_slice(&masked(&len).to_le_bytes());
            manual.extend_from_slice(p);
            manual.extend_from_slice(&masked(p).to_le_bytes());
        }
        ensure!(bytes == manual, "round {round}: encoding differs from reference");
        let back: Result<Vec<Vec<u8>>, _> = RecordReader::new(&bytes[..]).collect();
        ensure!(back.map_err(|e| e.to_string())? == payloads, "round {round}: round trip differs");

        if round < 10 {
            for pos in 0..bytes.len() {
                let mut bad = bytes.clone();
                bad[pos] ^= rng.gen_range(1..=255u8);
                let read: Result<Vec<Vec<u8>>, _> = RecordReader::new(&bad[..]).collect();
                ensure!(read.is_err(), "round {round}: corruption at byte {pos} went unnoticed");
                corruptions += 1;
            }
        }
    }
    Ok(format!("40 round trips; {corruptions} single-byte corruptions all detected; empty=16 bytes"))
}

// ---------------------------------------------------------------- cochran

fn cochran() -> Outcome {
    // n = N z^2 p q / (e^2 (N - 1) + z^2 p q), rounded up
    let oracle = |n: u64, e: f64, z: f64| -> u64 {
        let zpq = z * z * 0.25;
        let v = (n as f64 * zpq / (e * e * (n as f64 - 1.0) + zpq)).ceil() as u64;
        v.min(n)
    };
    let got = required_sample_size(14_740, 0.05, Confidence::P95).map_err(|e| e.to_string())?;
    ensure!(got == 375, "library gave {got}");
    ensure!(oracle(14_740, 0.05, 1.96) == 375, "oracle gave {}", oracle(14_740, 0.05, 1.96));

    let levels = [(Confidence::P90, 1.645), (Confidence::P95, 1.96), (Confidence::P99, 2.576)];
    let pops = [1u64, 2, 10, 50, 100, 385, 1000, 2003, 14_740, 42_973, 1_000_000];
    let margins = [0.01, 0.02, 0.03, 0.05, 0.1, 0.2];
    for &(conf, z) in &levels {
        for &m in &margins {
            let mut prev = 0;
            for &n in &pops {
                let v = required_sample_size(n, m, conf).map_err(|e| e.to_string())?;
                ensure!(v.abs_diff(oracle(n, m, z)) <= 1, "N={n} e={m} {conf}: {v} vs {}", oracle(n, m, z));
                ensure!(v <= n && v >= 1, "N={n} e={m}: {v} outside 1..=N");
                ensure!(v >= prev, "N={n} e={m}: shrank with population");
                prev = v;
            }
        }
        for &n in &pops {
            let sizes: Vec<u64> = margins.iter().map(|&m| required_sample_size(n, m, conf).unwrap()).collect();
            ensure!(sizes.windows(2).all(|w| w[0] >= w[1]), "N={n}: grew with margin {sizes:?}");
        }
    }
    for &n in &pops {
        for &m in &margins {
            let s: Vec<u64> = levels.iter().map(|&(c, _)| required_sample_size(n, m, c).unwrap()).collect();
            ensure!(s.windows(2).all(|w| w[0] <= w[1]), "N={n} e={m}: shrank with confidence {s:?}");
        }
    }
    Ok("N=14740 95% 5% -> 375; grid monotone".into())
}

// ---------------------------------------------------------------- end to end

fn wait_until(mut cond: impl FnMut() -> bool, limit: Duration) -> Result<(), String> {
    let start = Instant::now();
    while !cond() {
        if start.elapsed() > limit {
            return Err(format!("condition not reached within {limit:?}"));
        }
        std::thread::sleep(Duration::from_millis(5));
    }
    Ok(())
}

type RecordKey = (String, String, u64, [u64; 4]);

fn key(hash: &str, label: &str, score: f64, b: [f64; 4]) -> RecordKey {
    (hash.to_string(), label.to_string(), score.to_bits(), b.map(f64::to_bits))
}

fn end_to_end() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let scan = ingest_directory(fixtures().join("dropdir")).map_err(|e| e.to_string())?;
    ensure!(scan.events.len() == 50, "{} events", scan.events.len());

    // oracle: surviving detections per content hash straight from the fixture
    let text = std::fs::read_to_string(fixtures().join("mock/detections.jsonl")).map_err(|e| e.to_string())?;
    let mut fixture: HashMap<String, Vec<RecordKey>> = HashMap::new();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let hash = v["image_sha256"].as_str().unwrap().to_string();
        let kept = v["detections"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|d| d["score"].as_f64().unwrap() > 0.5)
            .map(|d| {
                let b: Vec<f64> = d["box"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
                key(&hash, d["label"].as_str().unwrap(), d["score"].as_f64().unwrap(), [b[0], b[1], b[2], b[3]])
            })
            .collect();
        fixture.insert(hash, kept);
    }
    let mut want: BTreeMap<RecordKey, usize> = BTreeMap::new();
    let mut want_blank: BTreeSet<String> = BTreeSet::new();
    for e in &scan.events {
        match fixture.get(&e.content_hash) {
            Some(k) if !k.is_empty() => k.iter().for_each(|k| *want.entry(k.clone()).or_default() += 1),
            _ => {
                want_blank.insert(e.event_id.clone());
            }
        }
    }

    let mock = Arc::new(MockBackend::from_dir(&fixtures().join("mock")).map_err(|e| e.to_string())?);
    let server = MockServer::start(mock.clone(), "127.0.0.1:0").map_err(|e| e.to_string())?;
    let addr = server.addr().to_string();
    let slot = Mutex::new(Some(server));
    let cfg = BackendConfig {
        endpoint: format!("http://{addr}"),
        timeout_s: 2.0,
        max_retries: 1,
        retry_base_ms: 2,
        workers: 1,
        ..BackendConfig::default()
    };
    let store = Arc::new(Store::open(tmp.path().join("trial.db"), cfg.confidence_floor).map_err(|e| e.to_string())?);
    let pipeline = Pipeline::new(store.clone(), Arc::new(HttpBackend::new(&cfg)), cfg, 1);

    let events = scan.events.clone();
    let (fault, mut summary) = pipeline.run(|queue: &BoundedQueue<IngestEvent>| -> Result<(), String> {
        for (i, e) in events.into_iter().enumerate() {
            if i == 15 || i == 35 {
                slot.lock().unwrap().take().unwrap().stop();
            }
            if i == 20 || i == 40 {
                wait_until(|| store.parked_count().unwrap_or(0) > 0, Duration::from_secs(10))?;
                let restarted = MockServer::start(mock.clone(), &addr).map_err(|e| e.to_string())?;
                *slot.lock().unwrap() = Some(restarted);
            }
            queue.enqueue(e).map_err(|e| e.to_string())?;
        }
        Ok(())
    });
    fault?;
    let outage_parked = summary.parked;
    ensure!(outage_parked > 0, "the outages parked nothing");
    ensure!(summary.queue.is_conserved(), "queue not conserved: {:?}", summary.queue);
    let mut rounds = 0;
    while store.parked_count().map_err(|e| e.to_string())? > 0 {
        rounds += 1;
        ensure!(rounds <= 5, "parked events never drained");
        let again = pipeline.redrive().map_err(|e| e.to_string())?;
        ensure!(again.queue.is_conserved(), "redrive queue not conserved");
        summary.merge(&again);
    }

    let hash_of: HashMap<&str, &str> =
        scan.events.iter().map(|e| (e.event_id.as_str(), e.content_hash.as_str())).collect();
    let mut got: BTreeMap<RecordKey, usize> = BTreeMap::new();
    for r in store.all_detections(&DetectionFilter::default()).map_err(|e| e.to_string())? {
        let hash = hash_of.get(r.event_id.as_str()).ok_or("record for unknown event")?;
        *got.entry(key(hash, r.label.name(), r.score, r.bbox.as_array())).or_default() += 1;
    }
    ensure!(got == want, "detection records differ from the fixture ({} vs {} keys)", got.len(), want.len());
    let got_blank: BTreeSet<String> = store
        .blank_records(&TimeRange::all())
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|b| b.event_id)
        .collect();
    ensure!(got_blank == want_blank, "blank records differ: {} vs {}", got_blank.len(), want_blank.len());
    let counts = store.species_counts(&TimeRange::all(), None).map_err(|e| e.to_string())?;
    ensure!(counts.total_images == 50, "{} images stored", counts.total_images);

    let replay = pipeline.run_events(ingest_directory(fixtures().join("dropdir")).map_err(|e| e.to_string())?.events);
    ensure!(replay.stored == 0 && replay.duplicates == 50, "replay stored {} dup {}", replay.stored, replay.duplicates);
    if let Some(s) = slot.lock().unwrap().take() {
        s.stop();
    }
    Ok(format!(
        "{} records, {} blanks, {outage_parked} parked during outages, {rounds} redrive round(s)",
        want.values().sum::<usize>(),
        want_blank.len()
    ))
}

// ---------------------------------------------------------------- profile

fn train_profile() -> Outcome {
    let out = trapline::dispatch(["trapline", "config", "emit"]);
    ensure!(out.exit_code == 0, "exit {}: {}", out.exit_code, out.summary);
    let mut seen: HashMap<String, String> = HashMap::new();
    for line in out.summary.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')) {
        let (k, v) = line.split_once('=').ok_or(format!("malformed line {line:?}"))?;
        ensure!(seen.insert(k.trim().into(), v.trim().into()).is_none(), "duplicate key {k}");
    }
    let num = |k: &str| -> Result<f64, String> {
        seen.get(k).ok_or(format!("missing {k}"))?.parse::<f64>().map_err(|e| format!("{k}: {e}"))
    };
    let expected = [
        ("learning_rate", 0.0004),
        ("batch_size", 32.0),
        ("resize_min", 1024.0),
        ("resize_max", 1024.0),
        ("feature_stride", 16.0),
        ("aug.random_square_crop_by_scale.scale_min", 0.6),
        ("aug.random_square_crop_by_scale.scale_max", 1.3),
        ("epochs", 58.0),
        ("steps", 30000.0),
    ];
    for (k, want) in expected {
        let got = num(k)?;
        ensure!(got == want, "{k} = {got}, expected {want}");
    }
    Ok("lr 0.0004, batch 32, 1024/1024, stride 16, crop 0.6-1.3, 58 epochs, 30000 steps".into())
}

// ---------------------------------------------------------------- runner

fn main() {
    let checks: [(&str, fn() -> Outcome, Option<Duration>); 10] = [
        ("confusion_replay", confusion_replay, Some(Duration::from_secs(1))),
        ("count_conservation", count_conservation, Some(Duration::from_secs(5))),
        ("metric_oracle_equivalence", metric_oracles, None),
        ("iou_properties", iou_properties, None),
        ("threshold_rule", threshold_rule, None),
        ("split_replay", split_replay, None),
        ("record_container", record_container, None),
        ("cochran_sample_size", cochran, None),
        ("end_to_end_pipeline", end_to_end, Some(Duration::from_secs(30))),
        ("train_profile_golden", train_profile, None),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check, limit) in checks {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let result = match (result, limit) {
            (Ok(_), Some(l)) if elapsed > l => Err(format!("took {elapsed:.2?}, limit {l:?}")),
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!("PASS {name} ({elapsed:.2?}) {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({elapsed:.2?}) {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
