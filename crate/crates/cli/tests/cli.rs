use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dualformer::analysis::{cost_full, cost_gp, cost_lw, CostReport};
use dualformer::attention::PyramidSpec;
use dualformer::model::weights::{read_weight_set, write_weight_set, WeightSet, MANIFEST_FILE};
use dualformer::numerics::conv3d;
use dualformer::numerics::io::{self, StoredTensor};
use dualformer::oracle::conv2d_ref;
use dualformer::Tensor;
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualformer"))
        .args(args)
        .env_remove("DFK_THREADS")
        .output()
        .expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("valid json")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn describe_tiny_stage_one() {
    let v = ok_json(&["describe", "--preset", "tiny", "--format", "json"]);
    assert_eq!(v["stages"][0]["tokens"], 50176);
    assert_eq!(v["stages"][0]["priors"], 456);
    let table = String::from_utf8(run(&["describe", "--preset", "tiny"]).stdout).unwrap();
    assert!(table.contains("50176") && table.contains("456"));
}

#[test]
fn describe_base_whole_pyramid() {
    let v = ok_json(&["describe", "--preset", "base", "--format", "json"]);
    assert_eq!(v["stages"][3]["pyramid"], serde_json::json!(["WHOLE"]));
    assert_eq!(v["stages"][3]["prior_grids"], serde_json::json!([[16, 7, 7]]));
}

#[test]
fn unknown_preset_is_exit_2() {
    let out = run(&["describe", "--preset", "huge"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("tiny, small, base, micro"), "{}", stderr(&out));
}

#[test]
fn params_tiny() {
    let v = ok_json(&["params", "--preset", "tiny", "--format", "json"]);
    let n = v["totals"]["params"].as_f64().unwrap();
    assert!((n / 21.8e6 - 1.0).abs() <= 0.05, "{n}");
}

#[test]
fn flops_tiny_and_schema_round_trip() {
    let out = run(&["flops", "--preset", "tiny", "--input", "32x224x224", "--format", "json"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let report = CostReport::from_json(&text).expect("analysis schema");
    let g = report.totals.macs as f64 / 1e9;
    assert!((g / 60.0 - 1.0).abs() <= 0.2, "{g}");
    let mlp = report.share(dualformer::trace::CostKind::Mlp);
    assert!((mlp - 0.5).abs() <= 0.15, "{mlp}");
    assert_eq!(report.to_json().trim(), text.trim());
}

#[test]
fn flops_csv_and_output_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flops.csv");
    let out = run(&["flops", "--preset", "micro", "--format", "csv", "--output", path.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("label,kind,macs,params\n"));
    assert!(text.contains("stage1.block0.lw.qk,attention,"));
}

#[test]
fn forward_is_deterministic() {
    let a = ok_json(&["forward", "--preset", "micro", "--seed", "9", "--format", "json"]);
    let b = ok_json(&["forward", "--preset", "micro", "--seed", "9", "--format", "json"]);
    let c = ok_json(&["forward", "--preset", "micro", "--seed", "10", "--format", "json"]);
    assert_eq!(a, b);
    assert_ne!(a["checksum"], c["checksum"]);
}

#[test]
fn forward_threads_do_not_change_bits() {
    let a = ok_json(&["forward", "--seed", "2", "--format", "json", "--threads", "1"]);
    let b = ok_json(&["forward", "--seed", "2", "--format", "json", "--threads", "3"]);
    assert_eq!(a["checksum"], b["checksum"]);
}

#[test]
fn forward_one_class_and_logits_dump() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("logits.dftk");
    let v = ok_json(&["forward", "--classes", "1", "--format", "json", "--output", path.to_str().unwrap()]);
    assert_eq!(v["logits"].as_array().unwrap().len(), 1);
    let t = io::load(&path).unwrap().to_f64();
    assert_eq!(t.shape(), [1]);
    assert_eq!(t.data()[0], v["logits"][0].as_f64().unwrap());
}

#[test]
fn forward_numeric_error_is_exit_3() {
    let out = run(&["forward", "--inject-nan"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("patch_embed"), "{}", stderr(&out));
}

#[test]
fn config_files() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("cfg.json");
    fs::write(&good, r#"{"base": "micro", "num_classes": 3}"#).unwrap();
    let v = ok_json(&["forward", "--config", good.to_str().unwrap(), "--format", "json"]);
    assert_eq!(v["logits"].as_array().unwrap().len(), 3);

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(run(&["describe", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    let missing = dir.path().join("missing.json");
    assert_eq!(run(&["params", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(run(&["flops", "--input", "32x100x100"]).status.code(), Some(2));
    assert_eq!(run(&["flops", "--preset", "tiny", "--config", "x.json"]).status.code(), Some(2));
}

#[test]
fn gradcheck_passes_per_group_and_fault_fails() {
    let v = ok_json(&["gradcheck", "--eps", "1e-5", "--format", "json"]);
    assert_eq!(v["passed"], true);
    for c in v["checks"].as_array().unwrap() {
        assert!(c["max_error"].as_f64().unwrap() < 1e-4);
        assert!(!c["groups"].as_array().unwrap().is_empty());
    }
    let out = run(&["gradcheck", "--inject-fault"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("seed="));
}

#[test]
fn oracle_check_passes_and_fault_fails() {
    let v = ok_json(&["oracle-check", "--format", "json"]);
    assert_eq!(v["passed"], true);
    for c in v["checks"].as_array().unwrap() {
        assert!(c["max_error"].as_f64().unwrap() < 1e-10, "{c}");
    }
    assert_eq!(run(&["oracle-check", "--cases", "4", "--inject-fault"]).status.code(), Some(1));
}

#[test]
fn bench_ladder_is_monotone_and_matches_analysis() {
    let v = ok_json(&["bench", "--repeat", "1", "--format", "json"]);
    assert_eq!(v["monotone"], true, "{v}");
    let spec = PyramidSpec::grids(&[[1, 1, 1], [2, 2, 2], [4, 4, 4]]);
    for r in v["rungs"].as_array().unwrap() {
        let map: Vec<usize> = serde_json::from_value(r["map"].clone()).unwrap();
        let map = [map[0], map[1], map[2]];
        let m = map.iter().product();
        let dual = cost_lw(2, 4, 4, m, 64).unwrap() + cost_gp(&spec, map, 64).unwrap().factorized;
        assert_eq!(r["full_macs"].as_u64().unwrap(), cost_full(m, 64).unwrap());
        assert_eq!(r["dual_macs"].as_u64().unwrap(), dual);
    }
}

#[test]
fn bench_repeat_reports_min_and_median() {
    let v = ok_json(&["bench", "--ladder", "4x4x4,4x8x8", "--dim", "8", "--repeat", "5", "--format", "json"]);
    for r in v["rungs"].as_array().unwrap() {
        for k in ["full_seconds", "dual_seconds"] {
            assert!(r[k]["min"].as_f64().unwrap() <= r[k]["median"].as_f64().unwrap());
        }
    }
    let table = String::from_utf8(run(&["bench", "--ladder", "4x4x4", "--dim", "8", "--repeat", "5"]).stdout).unwrap();
    assert!(table.contains("min") && table.contains("med"));
    assert_eq!(run(&["bench", "--ladder", "4x6x6"]).status.code(), Some(2));
}

fn pattern(shape: &[usize], phase: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|i| (i as f64 * 0.37 + phase).sin()).collect()).unwrap()
}

/// A 2D manifest shaped like the micro model's stage-1 patch embedding.
fn write_2d_manifest(dir: &Path) {
    let set = WeightSet {
        config: None,
        tensors: vec![
            ("stage1.merge.weight".into(), StoredTensor::F64(pattern(&[2, 2, 3, 8], 0.1))),
            ("stage1.merge.bias".into(), StoredTensor::F64(pattern(&[8], 0.2))),
            ("stage1.peg.weight".into(), StoredTensor::F64(pattern(&[8, 3, 3], 0.3))),
            ("head.weight".into(), StoredTensor::F32(pattern(&[64, 10], 0.4).map(|v| v as f32))),
        ],
    };
    write_weight_set(dir, &set).unwrap();
}

#[test]
fn inflate_t1_is_byte_identical() {
    let src = tempfile::tempdir().unwrap();
    let dst = tempfile::tempdir().unwrap();
    write_2d_manifest(src.path());
    let out = run(&["inflate", src.path().to_str().unwrap(), dst.path().to_str().unwrap(), "--t-extent", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let a = read_weight_set(src.path()).unwrap();
    let b = read_weight_set(dst.path()).unwrap();
    for ((na, ta), (nb, tb)) in a.tensors.iter().zip(&b.tensors) {
        assert_eq!(na, nb);
        let (ba, bb) = match (ta, tb) {
            (StoredTensor::F64(x), StoredTensor::F64(y)) => (io::encode(x), io::encode(y)),
            (StoredTensor::F32(x), StoredTensor::F32(y)) => (io::encode(x), io::encode(y)),
            _ => panic!("{na}: dtype changed"),
        };
        // Data follows the header; only the header gains an axis.
        let data = |b: &[u8], rank: usize| b[16 + 8 * rank..].to_vec();
        assert_eq!(data(&ba, ta.shape().len()), data(&bb, tb.shape().len()), "{na}");
    }
}

#[test]
fn inflated_patch_embedding_matches_2d_frames() {
    let src = tempfile::tempdir().unwrap();
    let dst = tempfile::tempdir().unwrap();
    write_2d_manifest(src.path());
    let out = run(&["inflate", src.path().to_str().unwrap(), dst.path().to_str().unwrap(), "--t-extent", "2", "--format", "json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    let shapes: Vec<Value> = report["tensors"].as_array().unwrap().iter().map(|t| t["shape_out"].clone()).collect();
    assert_eq!(shapes, [serde_json::json!([2, 2, 2, 3, 8]), serde_json::json!([8]), serde_json::json!([8, 2, 3, 3]), serde_json::json!([64, 10])]);

    let set = read_weight_set(dst.path()).unwrap();
    let w3 = set.tensors[0].1.to_f64();
    let bias = set.tensors[1].1.to_f64();
    let w2 = read_weight_set(src.path()).unwrap().tensors[0].1.to_f64();
    let frame = pattern(&[16, 16, 3], 0.9);
    let clip = Tensor::from_vec([4, 16, 16, 3], frame.data().repeat(4)).unwrap();
    let y = conv3d(&clip, &w3, Some(&bias), [2, 2, 2], [0; 3]).unwrap();
    assert_eq!(y.shape(), [2, 8, 8, 8]);
    let per = conv2d_ref(&frame, &w2, [2, 2]).unwrap();
    for (t, chunk) in y.data().chunks(per.numel()).enumerate() {
        for (i, (&a, &b)) in chunk.iter().zip(per.data()).enumerate() {
            let expect = b + bias.data()[i % 8];
            assert!((a - expect).abs() < 1e-10, "frame {t} element {i}: {a} vs {expect}");
        }
    }
}

#[test]
fn inflate_input_errors_are_exit_2() {
    let dst = tempfile::tempdir().unwrap();
    let missing = dst.path().join("nope");
    let out = run(&["inflate", missing.to_str().unwrap(), dst.path().to_str().unwrap(), "--t-extent", "2"]);
    assert_eq!(out.status.code(), Some(2));

    let bad = tempfile::tempdir().unwrap();
    fs::write(bad.path().join(MANIFEST_FILE), r#"{"format": "something-else"}"#).unwrap();
    let out = run(&["inflate", bad.path().to_str().unwrap(), dst.path().to_str().unwrap(), "--t-extent", "2"]);
    assert_eq!(out.status.code(), Some(2));

    let src = tempfile::tempdir().unwrap();
    write_2d_manifest(src.path());
    let out = run(&["inflate", src.path().to_str().unwrap(), dst.path().to_str().unwrap(), "--t-extent", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn weights_round_trip_through_forward() {
    use dualformer::model::{init_random, save_weights, ModelConfig};
    let dir = tempfile::tempdir().unwrap();
    save_weights(dir.path(), &init_random(&ModelConfig::micro(), 5).unwrap()).unwrap();
    let from_file = ok_json(&["forward", "--seed", "5", "--weights", dir.path().to_str().unwrap(), "--format", "json"]);
    let from_seed = ok_json(&["forward", "--seed", "5", "--format", "json"]);
    assert_eq!(from_file["checksum"], from_seed["checksum"]);
    let other = tempfile::tempdir().unwrap();
    assert_eq!(run(&["forward", "--weights", other.path().to_str().unwrap()]).status.code(), Some(2));
}
