//! Acceptance run: one line per criterion, nonzero exit on any failure.

mod common;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::OpenOptions;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ContinuousCDF, StudentsT};

use ptkit_core::audio::MonoAudio;
use ptkit_core::corpus::{CorpusManifest, PhoneInterval, Utterance};
use ptkit_core::delexify::{design_lowpass, FilterSpec};
use ptkit_core::dtw::dtw_distance;
use ptkit_core::metrics::{f0_dtw_error, normalize_batch};
use ptkit_core::pairing::{outlier_threshold, select_f0_pairs, PairingConfig};
use ptkit_core::pitch::{estimate_f0, F0Track, PhoneContour, YinConfig};
use ptkit_core::stats::{mean_ci95, paired_t_test};
use ptkit_listensvc::service::{CreateStudy, RegisterListener, SubmitResponse};
use ptkit_listensvc::{NextScreen, Payload, Screen, ScreenKind, StudyConfig, StudyService};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit_s: f64, detail: String) -> Outcome {
    let s = elapsed.as_secs_f64();
    check(s < limit_s, format!("{detail}; {s:.2} s (limit {limit_s} s)"))
}

// ---------------------------------------------------------------- DTW

/// Minimum over every monotone path, enumerated without memoization.
fn brute_force_cost(a: &[f64], b: &[f64], i: usize, j: usize) -> f64 {
    let here = (a[i] - b[j]).abs();
    if i + 1 == a.len() && j + 1 == b.len() {
        return here;
    }
    let mut best = f64::INFINITY;
    if i + 1 < a.len() {
        best = best.min(brute_force_cost(a, b, i + 1, j));
    }
    if j + 1 < b.len() {
        best = best.min(brute_force_cost(a, b, i, j + 1));
    }
    if i + 1 < a.len() && j + 1 < b.len() {
        best = best.min(brute_force_cost(a, b, i + 1, j + 1));
    }
    here + best
}

fn dtw_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..=8);
        let m = rng.random_range(1..=8);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
        let expected = brute_force_cost(&a, &b, 0, 0) / (n + m) as f64;
        let got = dtw_distance(&a, &b).map_err(|e| e.to_string())?;
        worst = worst.max((got - expected).abs());
    }
    if worst > 1e-9 {
        return Err(format!("max deviation {worst:e}"));
    }
    within(start.elapsed(), 10.0, format!("1000 pairs, max deviation {worst:.1e}"))
}

// ------------------------------------------------------------ pairing

fn utterance(id: &str, speaker: &str, n_phones: usize) -> Utterance {
    let phones = (0..n_phones.max(1))
        .map(|k| PhoneInterval {
            label: "a".into(),
            start_s: k as f64 * 0.1,
            end_s: (k + 1) as f64 * 0.1,
        })
        .collect();
    let dur = n_phones.max(1) as f64 * 0.1;
    Utterance::new(id, speaker, format!("sent-{id}"), "x", phones, format!("{id}.wav"), None, dur)
}

fn contour(id: &str, values: Vec<f64>) -> (String, PhoneContour) {
    let phone_indices = (0..values.len()).collect();
    (
        id.to_string(),
        PhoneContour {
            utterance_id: id.to_string(),
            values,
            phone_indices,
        },
    )
}

fn pairing_constants() -> Outcome {
    let cfg = PairingConfig::default();
    let window = cfg.max_length_difference(100);
    if window != 15 {
        return Err(format!("window for 100 phones is {window}, expected 15"));
    }
    let m = CorpusManifest::new(
        ".",
        vec![utterance("t", "A", 100), utterance("r115", "B", 115), utterance("r116", "B", 116)],
    )
    .map_err(|e| e.to_string())?;
    let contours = HashMap::from([
        contour("t", vec![0.0; 100]),
        contour("r115", vec![5.0; 115]),
        contour("r116", vec![0.0; 116]),
    ]);
    let out = select_f0_pairs(&contours, &m, &PairingConfig {
        cutoff_sigmas: 100.0,
        ..cfg.clone()
    })
    .map_err(|e| e.to_string())?;
    let chosen = out.pairs.iter().find(|p| p.target_id == "t").map(|p| p.reference_id.as_str());
    if chosen != Some("r115") {
        return Err(format!("100-phone target paired with {chosen:?}, expected r115"));
    }

    let (mean, std, thr) = outlier_threshold(&[0.1, 0.2, 5.0], 1.0);
    let kept: Vec<f64> = [0.1, 0.2, 5.0].into_iter().filter(|d| *d <= thr).collect();
    check(
        kept == [0.1, 0.2],
        format!("window 15 phones (115 in, 116 out); cutoff {mean:.4} + {std:.4} = {thr:.4} keeps {kept:?}"),
    )
}

/// AR(1) contour with unit marginal variance.
fn random_contour(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let noise = Normal::new(0.0, (1.0f64 - 0.25).sqrt()).unwrap();
    let mut x = Normal::new(0.0, 1.0).unwrap().sample(rng);
    (0..len)
        .map(|_| {
            x = 0.5 * x + noise.sample(rng);
            x
        })
        .collect()
}

fn twin_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let jitter = Normal::new(0.0, 0.1).unwrap();
    let mut utts = Vec::new();
    let mut contours = HashMap::new();
    let mut twin_of = HashMap::new();
    for k in 0..250 {
        let len = rng.random_range(20..=60);
        let base = random_contour(&mut rng, len);
        let twin: Vec<f64> = base.iter().map(|v| v + jitter.sample(&mut rng)).collect();
        let (a, b) = (format!("u{k:03}a"), format!("u{k:03}b"));
        utts.push(utterance(&a, &format!("spk{}", k % 10), len));
        utts.push(utterance(&b, &format!("spk{}", (k + 1) % 10), len));
        contours.extend([contour(&a, base), contour(&b, twin)]);
        twin_of.insert(a.clone(), b.clone());
        twin_of.insert(b, a);
    }
    let m = CorpusManifest::new(".", utts).map_err(|e| e.to_string())?;

    let start = Instant::now();
    let nearest = select_f0_pairs(&contours, &m, &PairingConfig {
        cutoff_sigmas: 1e9,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let is_twin = |p: &&ptkit_core::PairRecord| twin_of[&p.target_id] == p.reference_id;
    let recovered = nearest.pairs.iter().filter(is_twin).count();

    let cut = select_f0_pairs(&contours, &m, &PairingConfig::default()).map_err(|e| e.to_string())?;
    let retained_twins = cut.pairs.iter().filter(is_twin).count();
    let rate = recovered as f64 / 500.0;
    let detail = format!(
        "nearest neighbour is the twin for {recovered}/500 ({:.1}%); \
         after the mean+1 sigma cut {retained_twins}/{} retained pairs are twins",
        100.0 * rate,
        cut.pairs.len()
    );
    if rate < 0.95 {
        return Err(detail);
    }
    within(elapsed, 60.0, detail)
}

// ---------------------------------------------------------------- F0

fn f0_estimator() -> Outcome {
    let sr = 16_000u32;
    let cfg = YinConfig::default();
    let mut notes = Vec::new();
    let mut failed = false;
    for hz in [80.0, 120.0, 220.0, 400.0] {
        let x: Vec<f64> = (0..sr)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * hz * f64::from(i) / f64::from(sr)).sin())
            .collect();
        let t = estimate_f0(&MonoAudio::new(sr, x), &cfg).map_err(|e| e.to_string())?;
        let mut v: Vec<f64> = t.voiced_values().collect();
        v.sort_by(f64::total_cmp);
        let median = if v.is_empty() { f64::NAN } else { v[v.len() / 2] };
        failed |= !((median - hz).abs() <= 1.0);
        notes.push(format!("{hz} Hz -> {median:.2}"));
    }
    let unvoiced = |x: Vec<f64>| -> Result<f64, String> {
        let t = estimate_f0(&MonoAudio::new(sr, x), &cfg).map_err(|e| e.to_string())?;
        Ok(1.0 - t.voiced_count() as f64 / t.len() as f64)
    };
    let silence = unvoiced(vec![0.0; sr as usize])?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise = unvoiced((0..sr).map(|_| rng.random_range(-0.5..0.5)).collect())?;
    failed |= silence < 0.99 || noise < 0.99;
    let detail = format!(
        "{}; unvoiced: silence {:.1}%, white noise {:.1}%",
        notes.join(", "),
        100.0 * silence,
        100.0 * noise
    );
    check(!failed, detail)
}

// ------------------------------------------------------------- filter

/// Steady-state gain of the cascade on a sine, in dB.
fn measured_gain_db(f: f64, sr: f64) -> f64 {
    let cascade = design_lowpass(&FilterSpec::default(), sr).unwrap();
    let n = (2.0 * sr) as usize;
    let x: Vec<f64> = (0..n).map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / sr).sin()).collect();
    let y = cascade.process(&x);
    let rms = |s: &[f64]| (s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64).sqrt();
    20.0 * (rms(&y[n / 2..]) / rms(&x[n / 2..])).log10()
}

fn delexify_filter() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for sr in [16_000.0, 44_100.0] {
        let cascade = design_lowpass(&FilterSpec::default(), sr).map_err(|e| e.to_string())?;
        let gains: Vec<(f64, f64)> = [200.0, 400.0, 800.0]
            .iter()
            .map(|&f| (cascade.magnitude_db(f), measured_gain_db(f, sr)))
            .collect();
        for (designed, measured) in &gains {
            ok &= (designed - measured).abs() < 0.1;
        }
        let g: Vec<f64> = gains.iter().map(|g| g.1).collect();
        ok &= (g[0] + 3.0).abs() <= 0.5 && (g[1] + 24.0).abs() <= 3.0 && g[2] <= -45.0;
        notes.push(format!("{sr} Hz: {:.2} / {:.2} / {:.2} dB", g[0], g[1], g[2]));
    }
    check(ok, format!("measured at 200/400/800 Hz, {}", notes.join("; ")))
}

// ------------------------------------------------------------ metrics

fn metrics_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let len = rng.random_range(10..80);
        let hz: Vec<f64> = (0..len).map(|_| rng.random_range(70.0..350.0)).collect();
        let voiced: Vec<bool> = (0..len).map(|_| rng.random_bool(0.8)).collect();
        let t = F0Track::new(0.01, hz.clone(), voiced.clone()).unwrap();
        for a in [0.5, 2.0] {
            for b in [-1.0, 1.0] {
                let mapped: Vec<f64> = hz.iter().map(|f| (a * f.ln() + b).exp()).collect();
                let u = F0Track::new(0.01, mapped, voiced.clone()).unwrap();
                let e = f0_dtw_error(&u, &t).map_err(|e| e.to_string())?;
                worst = worst.max(e);
            }
        }
    }
    let norm = normalize_batch(&[0.0, 1.0, 2.0]).map_err(|e| e.to_string())?;
    check(
        worst <= 1e-9 && norm == [0.0, 0.5, 1.0],
        format!("max error under log-affine maps {worst:.1e}; normalize_batch {{0,1,2}} -> {norm:?}"),
    )
}

// -------------------------------------------------------------- stats

fn stats_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut dt, mut dp) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = rng.random_range(2..=30);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..5.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..5.0)).collect();
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let nf = n as f64;
        let md = d.iter().sum::<f64>() / nf;
        let sd = (d.iter().map(|x| (x - md).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
        let t = md / (sd / nf.sqrt());
        let p = 2.0 * StudentsT::new(0.0, 1.0, nf - 1.0).unwrap().cdf(-t.abs());
        let got = paired_t_test(&a, &b, 0.05).map_err(|e| e.to_string())?;
        dt = dt.max((got.t - t).abs());
        dp = dp.max((got.p - p).abs());
    }
    let ci = mean_ci95(&[3.0, 4.0, 5.0]).map_err(|e| e.to_string())?;
    check(
        dt <= 1e-6 && dp <= 1e-6 && ci.mean == 4.0 && (ci.ci95_halfwidth - 2.484).abs() <= 0.001,
        format!(
            "100 datasets, max |dt| {dt:.1e}, max |dp| {dp:.1e}; CI {{3,4,5}} = {} +/- {:.4}",
            ci.mean, ci.ci95_halfwidth
        ),
    )
}

// ------------------------------------------------------------ service

fn simulation_screens() -> Vec<Screen> {
    let mut screens = Vec::new();
    for k in 0..20 {
        screens.push(Screen {
            id: format!("mos{k:02}"),
            kind: ScreenKind::Mos,
            stimulus_refs: vec![format!("mos/{k}.wav")],
            category: "same_text".into(),
            system_labels: vec![["text", "f0", "daft"][k % 3].into()],
            item: Some(format!("s{}", k / 3)),
        });
        screens.push(Screen {
            id: format!("mushra{k:02}"),
            kind: ScreenKind::Mushra,
            stimulus_refs: (0..5).map(|s| format!("mu/{k}-{s}.wav")).collect(),
            category: "mushra".into(),
            system_labels: ["ref", "text", "f0", "daft", "shuffle"].map(String::from).to_vec(),
            item: None,
        });
        screens.push(Screen {
            id: format!("axy{k:02}"),
            kind: ScreenKind::Axy,
            stimulus_refs: (0..3).map(|s| format!("ax/{k}-{s}.wav")).collect(),
            category: "different_text".into(),
            system_labels: ["daft", "target", "source"].map(String::from).to_vec(),
            item: None,
        });
    }
    screens
}

fn payload_for(kind: ScreenKind, k: usize) -> Payload {
    match kind {
        ScreenKind::Mos => Payload::Mos(1 + (k % 5) as i64),
        ScreenKind::Mushra => Payload::Mushra(vec![80, 61, 49, (k % 30) as i64]),
        ScreenKind::Axy => Payload::Axy(if k % 2 == 0 {
            ptkit_core::stats::AxyChoice::X
        } else {
            ptkit_core::stats::AxyChoice::Y
        }),
        ScreenKind::Preference => Payload::Preference((k % 3) as i64),
    }
}

fn service_simulation() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let journal = dir.path().join("journal.jsonl");
    let start = Instant::now();
    let mut svc = StudyService::open(&journal, None).map_err(|e| e.to_string())?;
    svc.create_study(CreateStudy {
        study_id: Some("sim".into()),
        screens: simulation_screens(),
        config: StudyConfig {
            screens_per_listener: 36,
            min_ratings_per_screen: 8,
            rng_seed: 9,
        },
    })
    .map_err(|e| e.to_string())?;

    let listeners: Vec<String> = (0..20).map(|l| format!("listener{l:02}")).collect();
    let mut acked: Vec<(String, String, Payload)> = Vec::new();
    let mut assigned: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut restarts = 0;
    // staggered arrivals: listener l joins at round 2l, everyone answers one screen per round
    for round in 0..80 {
        if round % 2 == 0 && round / 2 < listeners.len() {
            let lid = &listeners[round / 2];
            let a = svc
                .register_listener(
                    "sim",
                    RegisterListener {
                        listener_id: Some(lid.clone()),
                        ..Default::default()
                    },
                )
                .map_err(|e| e.to_string())?;
            assigned.insert(lid.clone(), a.screens);
        }
        for lid in assigned.keys() {
            let NextScreen::Screen { screen } = svc.next_screen("sim", lid).map_err(|e| e.to_string())? else {
                continue;
            };
            let payload = payload_for(screen.kind, acked.len());
            svc.submit(
                "sim",
                SubmitResponse {
                    listener_id: lid.clone(),
                    screen_id: screen.screen_id.clone(),
                    payload: payload.clone(),
                },
            )
            .map_err(|e| e.to_string())?;
            acked.push((lid.clone(), screen.screen_id, payload));
        }
        if round == 30 || round == 55 {
            // crash with a torn half-line at the tail, then replay
            drop(svc);
            let mut f = OpenOptions::new().append(true).open(&journal).map_err(|e| e.to_string())?;
            f.write_all(br#"{"event":"response_received","study_id":"sim","resp"#)
                .map_err(|e| e.to_string())?;
            drop(f);
            svc = StudyService::open(&journal, None).map_err(|e| e.to_string())?;
            restarts += 1;
        }
    }
    drop(svc);
    let svc = StudyService::open(&journal, None).map_err(|e| e.to_string())?;
    let export = svc.export("sim").map_err(|e| e.to_string())?;
    let stats = svc.stats("sim").map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();

    let stored: HashMap<(&str, &str), &Payload> = export
        .responses
        .iter()
        .map(|r| ((r.listener_id.as_str(), r.screen_id.as_str()), &r.payload))
        .collect();
    let lost = acked
        .iter()
        .filter(|(l, s, p)| stored.get(&(l.as_str(), s.as_str())) != Some(&p))
        .count();
    let duplicate_assignments: usize = export
        .listeners
        .iter()
        .map(|l| l.screens.len() - l.screens.iter().collect::<HashSet<_>>().len())
        .sum();
    let min = export.rating_counts.values().copied().min().unwrap_or(0);
    let max = export.rating_counts.values().copied().max().unwrap_or(0);
    // within a category, counts stay within one listener's assignment of each other
    let balanced = stats.categories.values().all(|c| c.max_ratings - c.min_ratings <= 36);

    let detail = format!(
        "{} listeners, {} acknowledged / {} stored responses, {restarts} crash-restarts, lost {lost}; \
         ratings per screen {min}..={max}; duplicate assignments {duplicate_assignments}",
        export.listeners.len(),
        acked.len(),
        export.responses.len(),
    );
    if lost != 0
        || acked.len() != 20 * 36
        || export.responses.len() != acked.len()
        || duplicate_assignments != 0
        || min < 8
        || !balanced
        || stats.screens_below_min != 0
    {
        return Err(detail);
    }
    within(elapsed, 30.0, detail)
}

// ---------------------------------------------------------- end to end

fn end_to_end_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = common::write_corpus(dir.path());
    let export = common::write_export(dir.path());
    let (a, b) = (dir.path().join("first"), dir.path().join("second"));
    common::run_pipeline(&manifest, &export, &a);
    common::run_pipeline(&manifest, &export, &b);
    let (sa, sb) = (common::snapshot(&a), common::snapshot(&b));
    let differing: Vec<String> = sa
        .iter()
        .zip(&sb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.display().to_string())
        .collect();
    let bytes: usize = sa.iter().map(|f| f.1.len()).sum();
    check(
        sa.len() == sb.len() && differing.is_empty(),
        format!(
            "pair (text, f0, shuffle), evalset and report: {} files, {bytes} bytes, differing {differing:?}",
            sa.len()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("DTW oracle equivalence", dtw_oracle),
        ("Pairing constants", pairing_constants),
        ("Twin recovery", twin_recovery),
        ("F0 estimator", f0_estimator),
        ("Delexify filter", delexify_filter),
        ("Metrics invariance", metrics_invariance),
        ("Stats oracle", stats_oracle),
        ("Service protocol simulation", service_simulation),
        ("End-to-end determinism", end_to_end_determinism),
    ];
    let mut failures = 0;
    for (name, run) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(d) => println!("[PASS] {name}: {d}"),
            Err(d) => {
                failures += 1;
                println!("[FAIL] {name}: {d}");
            }
        }
    }
    println!("{} of 9 criteria passed", 9 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
