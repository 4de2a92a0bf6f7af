use std::path::Path;
use std::process::Command;

use avs_core::types::Palette;
use avs_data::image::read_mask;
use avs_train::Checkpoint;

fn avs(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_avs")).args(args).output().unwrap();
    assert!(out.status.success(), "avs {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn tiny_overrides(data: &Path, run: &Path) -> Vec<String> {
    [
        format!("data_root={}", data.display()),
        format!("output_dir={}", run.display()),
        "epochs=2".into(),
        "batch_size=2".into(),
        "model.backbone.channels=[4, 6, 8, 8]".into(),
        "model.backbone.stem_channels=4".into(),
        "model.aspp.channels=8".into(),
        "model.aspp.rates=[1, 2]".into(),
        "model.decoder.width=8".into(),
        "model.audio.dim=8".into(),
        "model.audio.channels=[4, 4, 4]".into(),
    ]
    .into_iter()
    .collect()
}

#[test]
fn synth_train_eval_predict_heatmap_cluster() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let data_s = data.to_str().unwrap();
    avs(&["synth", "--out", data_s, "--set", "videos=[3, 2, 2]", "--set", "subsets=[\"multi_source\"]"]);
    assert!(data.join("multi_source/manifest.tsv").exists());

    let mut args = vec!["train".to_string()];
    for o in tiny_overrides(&data, &run) {
        args.push("--set".into());
        args.push(o);
    }
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    avs(&args);
    for f in ["resolved_config.toml", "metrics.jsonl", "last.ckpt", "best.ckpt"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let log = std::fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(first["epoch"], 1);
    assert!(first["val_miou"].is_f64());
    let resolved = std::fs::read_to_string(run.join("resolved_config.toml")).unwrap();
    assert!(resolved.contains("epochs = 2"));

    let ckpt = run.join("last.ckpt");
    let ck = ckpt.to_str().unwrap();
    assert_eq!(Checkpoint::load(&ckpt).unwrap().epoch, 2);
    let eval_dir = dir.path().join("eval");
    let printed = avs(&["eval", "--checkpoint", ck, "--split", "test", "--out", eval_dir.to_str().unwrap()]);
    assert!(printed.contains("split=test") && printed.contains("miou="));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(eval_dir.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(json["videos"], 2);
    assert_eq!(json["per_video"].as_array().unwrap().len(), 2);

    let pred = dir.path().join("pred");
    avs(&["predict", "--checkpoint", ck, "--split", "valid", "--out", pred.to_str().unwrap()]);
    let palette = Palette::from_manifest(&std::fs::read_to_string(data.join("multi_source/palette.txt")).unwrap()).unwrap();
    let first_video = std::fs::read_dir(&pred).unwrap().next().unwrap().unwrap().path();
    for t in 0..5 {
        let (w, h, ids) = read_mask(&first_video.join(format!("{t}.png")), &palette, true).unwrap();
        assert_eq!((w, h, ids.len()), (64, 64, 64 * 64));
    }

    let maps = dir.path().join("maps");
    let printed = avs(&["heatmap", "--checkpoint", ck, "--split", "valid", "--stage", "3", "--out", maps.to_str().unwrap()]);
    assert!(printed.contains("wrote 10 heatmaps"));

    let tsv = dir.path().join("clusters.tsv");
    avs(&["cluster", "--checkpoint", ck, "--split", "test", "--k", "2", "--out", tsv.to_str().unwrap()]);
    let text = std::fs::read_to_string(&tsv).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 5);
}

#[test]
fn bad_input_fails_with_a_message() {
    let out = Command::new(env!("CARGO_BIN_EXE_avs")).args(["train", "--set", "batch_size=0"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("batch_size"));
    let out = Command::new(env!("CARGO_BIN_EXE_avs")).args(["eval", "--checkpoint", "/nonexistent.ckpt"]).output().unwrap();
    assert!(!out.status.success());
    let printed = avs(&["train", "--print-config", "--set", "seed=4"]);
    assert!(printed.contains("seed = 4"));
}
