#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::json;

use ptkit_core::audio::{write_wav, MonoAudio};
use ptkit_listensvc::service::{CreateStudy, RegisterListener, SubmitResponse};
use ptkit_listensvc::{NextScreen, Payload, Screen, ScreenKind, StudyConfig, StudyService};

pub const SAMPLE_RATE: u32 = 16_000;
pub const SPEAKERS: [(&str, f64); 4] = [("spk0", 110.0), ("spk1", 150.0), ("spk2", 190.0), ("spk3", 230.0)];

/// Six short sentences (training side of `--max-chars 30`) and six long ones.
pub const SENTENCES: [&str; 12] = [
    "Bring the red cup.",
    "Open the door now.",
    "He sat by the fire.",
    "Call me at noon.",
    "The dog ran home.",
    "Pass the salt, please.",
    "The committee postponed its decision until the spring meeting.",
    "Several travellers waited patiently beside the frozen river.",
    "A narrow staircase led to the library on the top floor.",
    "Nobody expected the orchestra to finish the program so early.",
    "She painted the fence while her brother repaired the gate.",
    "Fresh bread and warm soup were served to every guest at dinner.",
];

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_ptkit"))
}

pub fn ptkit(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env("PTKIT_LOG", "warn")
        .output()
        .expect("ptkit runs")
}

/// Runs `ptkit` and panics with its stderr on failure.
pub fn ok(args: &[&str]) -> String {
    let out = ptkit(args);
    assert!(
        out.status.success(),
        "ptkit {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// A gliding sine: F0 moves around `base_hz` following a sentence-specific
/// shape, so contours differ between sentences but share shape across
/// speakers.
pub fn glide(base_hz: f64, sentence: usize, secs: f64) -> Vec<f64> {
    let n = (secs * f64::from(SAMPLE_RATE)) as usize;
    let rate = 0.7 + 0.35 * sentence as f64;
    let mut phase = 0.0f64;
    (0..n)
        .map(|i| {
            let t = i as f64 / f64::from(SAMPLE_RATE);
            let f = base_hz * (1.0 + 0.15 * (2.0 * std::f64::consts::PI * rate * t).sin());
            phase += 2.0 * std::f64::consts::PI * f / f64::from(SAMPLE_RATE);
            0.5 * phase.sin()
        })
        .collect()
}

/// Writes `wav/*.wav` and `manifest.jsonl` under `root`; returns the manifest path.
pub fn write_corpus(root: &Path) -> PathBuf {
    fs::create_dir_all(root.join("wav")).unwrap();
    let mut lines = String::new();
    for (si, text) in SENTENCES.iter().enumerate() {
        let n_phones = text.chars().filter(|c| c.is_alphabetic()).count() / 2;
        for (spk, base) in SPEAKERS {
            let id = format!("{spk}_s{si:02}");
            let secs = 0.3 + 0.035 * n_phones as f64;
            let audio = MonoAudio::new(SAMPLE_RATE, glide(base, si, secs));
            write_wav(root.join("wav").join(format!("{id}.wav")), &audio).unwrap();
            let step = secs / n_phones as f64;
            let phones: Vec<_> = (0..n_phones)
                .map(|k| json!([format!("p{}", k % 7), k as f64 * step, (k + 1) as f64 * step]))
                .collect();
            let rec = json!({
                "id": id,
                "speaker_id": spk,
                "sentence_id": format!("s{si:02}"),
                "text": text,
                "audio_path": format!("wav/{id}.wav"),
                "duration_s": secs,
                "phones": phones,
            });
            lines.push_str(&rec.to_string());
            lines.push('\n');
        }
    }
    let path = root.join("manifest.jsonl");
    fs::write(&path, lines).unwrap();
    path
}

/// A completed four-kind study, exported to `<root>/export.json`.
pub fn write_export(root: &Path) -> PathBuf {
    let svc = StudyService::open(&root.join("journal.jsonl"), None).unwrap();
    let systems = ["text", "f0", "daft", "shuffle"];
    let mut screens = Vec::new();
    for item in 0..6 {
        for sys in &systems[..3] {
            screens.push(Screen {
                id: format!("mos-{sys}-{item}"),
                kind: ScreenKind::Mos,
                stimulus_refs: vec![format!("{sys}/{item}.wav")],
                category: "same_text".into(),
                system_labels: vec![sys.to_string()],
                item: Some(format!("s{item}")),
            });
        }
        screens.push(Screen {
            id: format!("mushra-{item}"),
            kind: ScreenKind::Mushra,
            stimulus_refs: (0..5).map(|k| format!("mu/{item}-{k}.wav")).collect(),
            category: "same_text".into(),
            system_labels: ["ref", "text", "f0", "daft", "shuffle"].map(String::from).to_vec(),
            item: Some(format!("s{item}")),
        });
        screens.push(Screen {
            id: format!("axy-{item}"),
            kind: ScreenKind::Axy,
            stimulus_refs: (0..3).map(|k| format!("ax/{item}-{k}.wav")).collect(),
            category: "different_text".into(),
            system_labels: ["daft", "target", "source"].map(String::from).to_vec(),
            item: Some(format!("s{item}")),
        });
        screens.push(Screen {
            id: format!("pref-{item}"),
            kind: ScreenKind::Preference,
            stimulus_refs: (0..4).map(|k| format!("pr/{item}-{k}.wav")).collect(),
            category: "different_text".into(),
            system_labels: ["target", "text", "f0", "daft"].map(String::from).to_vec(),
            item: Some(format!("s{item}")),
        });
    }
    svc.create_study(CreateStudy {
        study_id: Some("demo".into()),
        screens,
        config: StudyConfig {
            screens_per_listener: 12,
            min_ratings_per_screen: 2,
            rng_seed: 3,
        },
    })
    .unwrap();
    for l in 0..8 {
        let lid = format!("listener{l}");
        svc.register_listener(
            "demo",
            RegisterListener {
                listener_id: Some(lid.clone()),
                ..Default::default()
            },
        )
        .unwrap();
        let mut k = l as i64;
        while let NextScreen::Screen { screen } = svc.next_screen("demo", &lid).unwrap() {
            k += 1;
            let payload = match screen.kind {
                ScreenKind::Mos => Payload::Mos(1 + k % 5),
                ScreenKind::Mushra => Payload::Mushra(vec![90 - k % 7, 60 + k % 11, 50 + k % 13, 20 + k % 5]),
                ScreenKind::Axy => Payload::Axy(if k % 3 == 0 {
                    ptkit_core::stats::AxyChoice::Y
                } else {
                    ptkit_core::stats::AxyChoice::X
                }),
                ScreenKind::Preference => Payload::Preference(k % 3),
            };
            svc.submit(
                "demo",
                SubmitResponse {
                    listener_id: lid.clone(),
                    screen_id: screen.screen_id,
                    payload,
                },
            )
            .unwrap();
        }
    }
    let path = root.join("export.json");
    fs::write(&path, svc.export("demo").unwrap().to_json()).unwrap();
    path
}

/// Every regular file under `dir`, relative path and bytes, sorted.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// ingest, pitch, three pairing strategies, evalset and report into `out`.
/// The filtered manifest is written beside `manifest` so audio paths resolve.
pub fn run_pipeline(manifest: &Path, export: &Path, out: &Path) {
    fs::create_dir_all(out).unwrap();
    let tag = out.file_name().unwrap().to_str().unwrap();
    let train = manifest.with_file_name(format!("train-{tag}.jsonl"));
    ok(&["ingest", "--manifest", s(manifest), "--max-chars", "30", "--out", s(&train)]);
    fs::copy(&train, out.join("train.jsonl")).unwrap();
    let pitch = out.join("pitch");
    let contours = pitch.join("contours");
    ok(&["pitch", "--manifest", s(&train), "--out-dir", s(&pitch)]);
    let pairs: Vec<PathBuf> = ["text", "f0", "shuffle"]
        .iter()
        .map(|st| out.join(format!("pairs-{st}.jsonl")))
        .collect();
    for (strategy, dest) in ["text", "f0", "shuffle"].into_iter().zip(&pairs) {
        let mut args = vec!["pair", "--strategy", strategy, "--manifest", s(&train), "--out", s(dest), "--seed", "7"];
        if strategy == "f0" {
            args.extend(["--contours", s(&contours)]);
        }
        ok(&args);
    }
    let evalset = out.join("evalset.jsonl");
    let mut args = vec!["evalset", "--manifest", s(manifest), "--n-sentences", "4", "--seed", "11", "--out", s(&evalset)];
    args.push("--pairs");
    args.extend(pairs.iter().map(|p| s(p)));
    ok(&args);
    ok(&["report", "--export", s(export), "--out-dir", s(&out.join("report"))]);
}
