use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

use klassify_core::features::{write_features, FeatureSequence};
use klassify_core::nn::SeqTensor;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_klassify"));
    c.env_remove("KLASSIFY_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn klassify")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert_eq!(code(&o), 0, "stderr: {}", stderr(&o));
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

struct Trained {
    _dir: TempDir,
    root: PathBuf,
    classifier: PathBuf,
    localizer: PathBuf,
}

/// A small synthetic corpus with both models trained on it, shared by the tests.
fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let root = dir.path().to_path_buf();
        let corpus = root.join("corpus");
        ok(run(&["synth", "--out-dir", s(&corpus), "--clips", "120", "--seed", "4", "--features-only"]));
        let classifier = root.join("cls.klsf");
        let localizer = root.join("loc.klsf");
        let manifest = corpus.join("manifest.json");
        ok(run(&["train", "--manifest", s(&manifest), "--out-model", s(&classifier), "--epochs", "4"]));
        ok(run(&["train-localizer", "--manifest", s(&manifest), "--out-model", s(&localizer), "--epochs", "6", "--init", s(&classifier)]));
        Trained { _dir: dir, root, classifier, localizer }
    })
}

#[test]
fn extract_matches_golden_feature_file() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("clip.klft");
    let fx = fixtures();
    ok(run(&[
        "extract",
        "--landmarks",
        s(&fx.join("clip.landmarks.jsonl")),
        "--frames-raw",
        s(&fx.join("clip.rgb")),
        "--width",
        "32",
        "--height",
        "32",
        "--fps",
        "25",
        "--out",
        s(&out),
    ]));
    let got = std::fs::read(&out).unwrap();
    if std::env::var_os("KLASSIFY_BLESS").is_some() {
        std::fs::write(fx.join("clip.klft"), &got).unwrap();
    }
    assert_eq!(got, std::fs::read(fx.join("clip.klft")).unwrap());
}

#[test]
fn extract_reads_frames_from_stdin() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("clip.klft");
    let fx = fixtures();
    let o = bin()
        .args(["extract", "--landmarks", s(&fx.join("clip.landmarks.jsonl")), "--frames-raw", "-"])
        .args(["--width", "32", "--height", "32", "--fps", "25", "--out", s(&out)])
        .stdin(std::fs::File::open(fx.join("clip.rgb")).unwrap())
        .output()
        .unwrap();
    ok(o);
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(fx.join("clip.klft")).unwrap());
}

#[test]
fn truncated_frames_are_a_format_error() {
    let dir = TempDir::new().unwrap();
    let fx = fixtures();
    let raw = std::fs::read(fx.join("clip.rgb")).unwrap();
    let cut = dir.path().join("cut.rgb");
    std::fs::write(&cut, &raw[..raw.len() - 100]).unwrap();
    let o = run(&[
        "extract",
        "--landmarks",
        s(&fx.join("clip.landmarks.jsonl")),
        "--frames-raw",
        s(&cut),
        "--width",
        "32",
        "--height",
        "32",
        "--fps",
        "25",
        "--out",
        s(&dir.path().join("x.klft")),
    ]);
    assert_eq!(code(&o), 2);
    let msg = stderr(&o);
    assert!(msg.contains(&format!("expected {} bytes", raw.len())), "{msg}");
    assert!(msg.contains(&format!("received {}", raw.len() - 100)), "{msg}");
}

#[test]
fn missing_fps_is_a_usage_error() {
    let o = run(&["extract", "--landmarks", "a", "--frames-raw", "b", "--width", "4", "--height", "4", "--out", "c"]);
    assert_eq!(code(&o), 64);
    assert_eq!(code(&run(&["no-such-command"])), 64);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn synth_is_reproducible_and_respects_spec() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(run(&["synth", "--out-dir", s(out), "--clips", "5", "--seed", "9"]));
    }
    let mut names: Vec<PathBuf> = std::fs::read_dir(a.join("clips")).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    assert_eq!(names.len(), 15);
    for p in names.iter().chain([&a.join("manifest.json"), &a.join("spec.json")]) {
        let q = b.join(p.strip_prefix(&a).unwrap());
        assert_eq!(std::fs::read(p).unwrap(), std::fs::read(&q).unwrap(), "{}", p.display());
    }

    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, r#"{"clips": 6, "fake_fraction": 0.0}"#).unwrap();
    let real = dir.path().join("real");
    ok(run(&["synth", "--spec", s(&spec), "--out-dir", s(&real), "--features-only"]));
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(real.join("manifest.json")).unwrap()).unwrap();
    let entries = manifest.as_array().unwrap();
    assert_eq!(entries.len(), 6);
    assert!(entries.iter().all(|e| e["label"] == 0 && e["segments"].as_array().unwrap().is_empty()));
}

#[test]
fn parallel_synth_matches_single_thread() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(run(&["synth", "--out-dir", s(&a), "--clips", "6", "--features-only"]));
    ok(bin().args(["synth", "--out-dir", s(&b), "--clips", "6", "--features-only"]).env("KLASSIFY_THREADS", "3").output().unwrap());
    assert_eq!(std::fs::read(a.join("manifest.json")).unwrap(), std::fs::read(b.join("manifest.json")).unwrap());
    assert_eq!(std::fs::read(a.join("clips/clip_00005.klft")).unwrap(), std::fs::read(b.join("clips/clip_00005.klft")).unwrap());
}

#[test]
fn training_is_deterministic_and_reports_epoch() {
    let t = trained();
    let manifest = t.root.join("corpus/manifest.json");
    let again = t.root.join("cls-again.klsf");
    let o = ok(run(&["train", "--manifest", s(&manifest), "--out-model", s(&again), "--epochs", "4"]));
    let text = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(text.contains("selected epoch"), "{text}");
    let params: usize = text.split(';').next_back().unwrap().trim().split(' ').next().unwrap().parse().unwrap();
    assert!((100_000..=150_000).contains(&params));
    assert_eq!(std::fs::read(&again).unwrap(), std::fs::read(&t.classifier).unwrap());
    let history = std::fs::read_to_string(t.classifier.with_extension("history.csv")).unwrap();
    assert_eq!(history.lines().next().unwrap(), "epoch,train_loss,val_metric,val_loss,lr");
    assert_eq!(history.lines().count(), 5);
}

#[test]
fn empty_manifest_is_a_semantic_error() {
    let dir = TempDir::new().unwrap();
    let m = dir.path().join("m.json");
    std::fs::write(&m, "[]").unwrap();
    let o = run(&["train", "--manifest", s(&m), "--out-model", s(&dir.path().join("x.klsf"))]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn long_clip_runs_three_windows() {
    let t = trained();
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("long.klft");
    let seq = FeatureSequence::new(SeqTensor::zeros(512, 16), 25.0).unwrap();
    write_features(std::fs::File::create(&path).unwrap(), &seq).unwrap();
    let out = dir.path().join("scores.csv");
    let o = ok(run(&["infer", "--model", s(&t.classifier), "--features", s(&path), "--out-scores", s(&out), "--verbose"]));
    assert!(stderr(&o).contains("long: 3 windows"), "{}", stderr(&o));
    let line = std::fs::read_to_string(&out).unwrap();
    assert!(line.starts_with("long;"));
}

#[test]
fn localizer_leaves_real_clips_empty_and_checks_kind() {
    let t = trained();
    let dir = TempDir::new().unwrap();
    let real = dir.path().join("real");
    ok(run(&["synth", "--out-dir", s(&real), "--clips", "4", "--seed", "77", "--features-only", "--config", s(&write_real_spec(dir.path()))]));
    let feats: Vec<String> = (0..4).map(|i| s(&real.join(format!("clips/clip_{i:05}.klft"))).to_string()).collect();
    let out = dir.path().join("loc.json");
    let mut args = vec!["localize", "--model", s(&t.localizer), "--out-json", s(&out), "--fps", "25", "--features"];
    args.extend(feats.iter().map(String::as_str));
    ok(run(&args));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    for (id, segs) in json.as_object().unwrap() {
        assert!(segs.as_array().unwrap().is_empty(), "{id}: {segs}");
    }

    let o = run(&["localize", "--model", s(&t.classifier), "--features", &feats[0], "--out-json", s(&out)]);
    assert_eq!(code(&o), 4);
    let o = run(&["infer", "--model", s(&t.localizer), "--features", &feats[0], "--out-scores", s(&out)]);
    assert_eq!(code(&o), 4);
}

fn write_real_spec(dir: &Path) -> PathBuf {
    let p = dir.join("pipeline.json");
    std::fs::write(&p, r#"{"synth": {"fake_fraction": 0.0}}"#).unwrap();
    p
}

#[test]
fn localization_and_evaluation_round_trip() {
    let t = trained();
    let corpus = t.root.join("corpus");
    let manifest: Vec<serde_json::Value> = serde_json::from_slice(&std::fs::read(corpus.join("manifest.json")).unwrap()).unwrap();
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("loc.json");
    let feats: Vec<String> = manifest.iter().map(|e| s(&corpus.join(e["features"].as_str().unwrap())).to_string()).collect();
    let mut args = vec!["localize", "--model", s(&t.localizer), "--out-json", s(&out), "--threads", "2", "--features"];
    args.extend(feats.iter().map(String::as_str));
    ok(run(&args));

    // write -> read -> write is byte-identical
    let text = std::fs::read_to_string(&out).unwrap();
    let parsed: klassify_core::localization::LocalizationOutput = serde_json::from_str(&text).unwrap();
    assert_eq!(serde_json::to_string_pretty(&parsed).unwrap() + "\n", text);

    let metrics = dir.path().join("m.json");
    let per_video = dir.path().join("pv.csv");
    ok(run(&["evaluate", "--pred", s(&out), "--truth", s(&corpus.join("manifest.json")), "--out", s(&metrics), "--per-video", s(&per_video)]));
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(&metrics).unwrap()).unwrap();
    let score = m["score"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&score));
    assert!(m.get("auc").is_none());
    assert_eq!(std::fs::read_to_string(&per_video).unwrap().lines().count(), manifest.len() + 1);

    // ground truth scored against itself
    let mut perfect = serde_json::Map::new();
    for e in &manifest {
        let rows: Vec<serde_json::Value> = e["segments"].as_array().unwrap().iter().map(|s| serde_json::json!([1.0, s[0], s[1]])).collect();
        perfect.insert(e["id"].as_str().unwrap().to_string(), rows.into());
    }
    let pp = dir.path().join("perfect.json");
    std::fs::write(&pp, serde_json::to_string(&perfect).unwrap()).unwrap();
    ok(run(&["evaluate", "--pred", s(&pp), "--truth", s(&corpus.join("manifest.json")), "--out", s(&metrics)]));
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(&metrics).unwrap()).unwrap();
    assert_eq!(m["score"].as_f64().unwrap(), 1.0);
}

#[test]
fn evaluate_scores_injected_components() {
    let dir = TempDir::new().unwrap();
    let c = dir.path().join("c.json");
    std::fs::write(&c, r#"{"ap": [0.5117, 0.4017, 0.1701, 0.0416], "ar": [0.4259, 0.4259, 0.4259, 0.4259, 0.4258]}"#).unwrap();
    let out = dir.path().join("m.json");
    ok(run(&["evaluate", "--components", s(&c), "--out", s(&out)]));
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert!((m["score"].as_f64().unwrap() - 0.3536).abs() < 5e-5);
    let text = std::fs::read_to_string(&out).unwrap();
    let pos: Vec<usize> = ["\"50\"", "\"30\"", "\"20\"", "\"10\"", "\"5\""].iter().map(|k| text.find(k).unwrap()).collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]), "{text}");
}

#[test]
fn malformed_json_reports_position() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\n  \"a\": [[0.9, 0.0, 1.0],\n").unwrap();
    let truth = dir.path().join("truth.json");
    std::fs::write(&truth, r#"[{"id": "a", "features": "a.klft", "label": 1, "segments": [[0.0, 1.0]]}]"#).unwrap();
    let o = run(&["evaluate", "--pred", s(&bad), "--truth", s(&truth), "--out", s(&dir.path().join("m.json"))]);
    assert_eq!(code(&o), 2);
    let msg = stderr(&o);
    assert!(msg.contains("bad.json") && msg.contains("line 3"), "{msg}");
}

#[test]
fn calibration_recovers_known_parameters() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let dir = TempDir::new().unwrap();
    let scores = dir.path().join("labeled.csv");
    let mut text = String::from("video_id;score;label\n");
    for i in 0..10_000 {
        let s: f64 = rng.gen();
        let p = 1.0 / (1.0 + (-6.0 * s + 3.0).exp());
        text.push_str(&format!("v{i};{s};{}\n", u8::from(rng.gen_bool(p))));
    }
    std::fs::write(&scores, text).unwrap();
    let params = dir.path().join("p.json");
    ok(run(&["calibrate", "--scores-labeled", s(&scores), "--modality", "audio", "--out-params", s(&params)]));
    let p: serde_json::Value = serde_json::from_slice(&std::fs::read(&params).unwrap()).unwrap();
    assert!((p["a"].as_f64().unwrap() + 6.0).abs() / 6.0 < 0.05, "{p}");
    assert!((p["b"].as_f64().unwrap() - 3.0).abs() / 3.0 < 0.05, "{p}");
    assert_eq!(p["modality"], "audio");

    let single = dir.path().join("single.csv");
    std::fs::write(&single, "a;0.1;1\nb;0.7;1\n").unwrap();
    assert_eq!(code(&run(&["calibrate", "--scores-labeled", s(&single), "--out-params", s(&params)])), 3);
    let dup = dir.path().join("dup.csv");
    std::fs::write(&dup, "a;0.1;1\na;0.7;0\n").unwrap();
    assert_eq!(code(&run(&["calibrate", "--scores-labeled", s(&dup), "--out-params", s(&params)])), 2);
}

#[test]
fn fusion_falls_back_and_counts_one_sided_ids() {
    let dir = TempDir::new().unwrap();
    let audio = dir.path().join("audio.csv");
    let video = dir.path().join("video.csv");
    let cal = dir.path().join("cal.json");
    std::fs::write(&audio, "a;0.2\nb;0.9\n").unwrap();
    std::fs::write(&video, "b;0.4\nc;0.7\n").unwrap();
    std::fs::write(&cal, r#"{"a": -4.0, "b": 2.0, "modality": "audio"}"#).unwrap();
    let out = dir.path().join("fused.csv");

    ok(run(&["fuse", "--audio-scores", s(&audio), "--audio-cal", s(&cal), "--out", s(&out)]));
    let want: Vec<String> = [("a", 0.2f64), ("b", 0.9)]
        .iter()
        .map(|(id, x)| format!("{id};{}", 1.0 / (1.0 + (-4.0 * x + 2.0).exp())))
        .collect();
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().collect::<Vec<_>>(), want);

    let o = ok(run(&["fuse", "--audio-scores", s(&audio), "--video-scores", s(&video), "--out", s(&out)]));
    assert!(stderr(&o).contains("2 video ids"), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(&out).unwrap(), "a;0.2\nb;0.9\nc;0.7\n");
}
