use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use flest_cli::checkpoint::{Checkpoint, ClientSnapshot};
use flest_cli::commands::{self, checkpoint_config, restore_clients, BEST_CHECKPOINT_FILE};
use flest_cli::config::ExperimentConfig;
use flest_core::data::{partition, Split};
use flest_core::eval::{EvalReport, Filtering};
use flest_core::federation::{Mode, RoundRecord, SharedParams};
use flest_core::model::{AdamState, ModelParams, Scorer};
use flest_core::tensor::Matrix;
use serde_json::Value;
use tempfile::TempDir;

fn flest(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_flest"));
    cmd.args(args).env_remove("FLEST_OUTPUT_DIR");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn numbered_dataset(dir: &Path, n: usize) -> PathBuf {
    let path = dir.join("triples.txt");
    let text: String = (0..n).map(|i| format!("e{}\tr{}\te{}\n", i % 37, i % 3, (i * 7 + 1) % 41)).collect();
    fs::write(&path, text).unwrap();
    path
}

fn toy_config(out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        dataset: Some("synthetic:20:3:120:8:1".parse().unwrap()),
        num_clients: 2,
        rank: 8,
        lr: 0.01,
        dropout: 0.0,
        batch_size: 16,
        local_epochs: 1,
        rounds_max: 30,
        eval_every: 5,
        patience: 0,
        valid_ratio: 0.1,
        test_ratio: 0.1,
        output_dir: out.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

fn records(path: &Path) -> Vec<RoundRecord> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn partition_single_client_lists_every_line() {
    let dir = TempDir::new().unwrap();
    let data = numbered_dataset(dir.path(), 50);
    let out = dir.path().join("out");
    let o = flest(
        &["partition", "--dataset", data.to_str().unwrap(), "--num-clients", "1", "--valid-ratio", "0", "--test-ratio", "0", "--output-dir", out.to_str().unwrap()],
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = fs::read_to_string(out.join("partition/client_0.txt")).unwrap();
    let mut idx: Vec<usize> = manifest
        .lines()
        .map(|l| {
            let (i, s) = l.split_once('\t').unwrap();
            assert_eq!(s, "train");
            i.parse().unwrap()
        })
        .collect();
    idx.sort_unstable();
    assert_eq!(idx, (0..50).collect::<Vec<_>>());
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("partition/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["total_triples"], 50);
}

#[test]
fn partition_sizes_and_byte_identical_reruns() {
    let dir = TempDir::new().unwrap();
    let data = numbered_dataset(dir.path(), 1000);
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = flest(
            &["partition", "--dataset", data.to_str().unwrap(), "--num-clients", "5", "--partition-seed", seed, "--output-dir", out.to_str().unwrap()],
            &[],
        );
        assert!(o.status.success());
        (0..5).map(|i| fs::read(out.join(format!("partition/client_{i}.txt"))).unwrap()).collect::<Vec<_>>()
    };
    let a = run("a", "3");
    let b = run("b", "3");
    let c = run("c", "4");
    assert_eq!(a, b);
    assert_ne!(a, c);
    let sizes: Vec<usize> = a.iter().map(|m| m.iter().filter(|&&x| x == b'\n').count()).collect();
    assert_eq!(sizes, vec![200; 5]);
}

#[test]
fn partition_reports_missing_dataset() {
    let dir = TempDir::new().unwrap();
    let o = flest(&["partition", "--dataset", "/nonexistent/triples.txt", "--output-dir", dir.path().to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn single_round_gives_one_record() {
    let dir = TempDir::new().unwrap();
    let config = ExperimentConfig {
        rounds_max: 1,
        ..toy_config(dir.path())
    };
    let out = commands::train(&config, |_| {}).unwrap();
    let recs = records(&out.metrics_path());
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].round, 1);
    assert!(recs[0].valid.is_some(), "the last round is always evaluated");
}

#[test]
fn toy_run_is_fast_converges_and_reproduces() {
    let dir = TempDir::new().unwrap();
    let start = Instant::now();
    let a = commands::train(&toy_config(&dir.path().join("a")), |_| {}).unwrap();
    assert!(start.elapsed().as_secs() < 60);
    let recs = records(&a.metrics_path());
    assert_eq!(recs.len(), 30);
    assert!(recs.last().unwrap().train_loss < recs[0].train_loss);
    assert_eq!(recs.iter().filter(|r| r.valid.is_some()).count(), 6);

    let b = commands::train(&toy_config(&dir.path().join("b")), |_| {}).unwrap();
    assert_eq!(fs::read(a.metrics_path()).unwrap(), fs::read(b.metrics_path()).unwrap());
    assert_eq!(fs::read(a.checkpoint_path()).unwrap(), fs::read(b.checkpoint_path()).unwrap());
    assert!(a.output_dir.join(BEST_CHECKPOINT_FILE).exists());
}

#[test]
fn eval_after_train_matches_last_log_record() {
    let dir = TempDir::new().unwrap();
    let config = ExperimentConfig {
        rounds_max: 7,
        ..toy_config(dir.path())
    };
    let out = commands::train(&config, |_| {}).unwrap();
    let last = records(&out.metrics_path()).into_iter().rev().find_map(|r| r.valid).unwrap();
    let ev = commands::eval(&out.checkpoint_path(), Split::Valid, Filtering::Filtered).unwrap();
    assert_eq!(ev.round, 7);
    assert_eq!(ev.per_client, last.per_client);
    assert_eq!(ev.aggregate, last.aggregate);

    // the binary prints the same numbers as JSON and as a table
    let o = flest(&["eval", "--checkpoint", out.checkpoint_path().to_str().unwrap(), "--split", "valid"], &[]);
    assert!(o.status.success());
    let text = stdout(&o);
    let split_at = text.find("\nsplit ").unwrap();
    let json: Value = serde_json::from_str(&text[..split_at]).unwrap();
    let table: Vec<Vec<f64>> = text[split_at..]
        .lines()
        .skip(3)
        .map(|l| l.split_whitespace().skip(1).map(|x| x.parse().unwrap()).collect())
        .collect();
    let mut reports: Vec<&Value> = json["per_client"].as_array().unwrap().iter().collect();
    reports.push(&json["aggregate"]);
    assert_eq!(table.len(), reports.len());
    for (row, rep) in table.iter().zip(reports) {
        let want = vec![
            rep["num_queries"].as_f64().unwrap(),
            rep["mrr"].as_f64().unwrap(),
            rep["hits"]["1"].as_f64().unwrap(),
            rep["hits"]["3"].as_f64().unwrap(),
            rep["hits"]["10"].as_f64().unwrap(),
        ];
        assert_eq!(row, &want);
    }
    assert_eq!(json["aggregate"]["mrr"].as_f64().unwrap(), last.aggregate.mrr);
}

#[test]
fn checkpoint_reload_gives_identical_scores() {
    let dir = TempDir::new().unwrap();
    let config = ExperimentConfig {
        rounds_max: 3,
        ..toy_config(dir.path())
    };
    let out = commands::train(&config, |_| {}).unwrap();
    let ckpt = Checkpoint::load(&out.checkpoint_path()).unwrap();
    let restored = restore_clients(&ckpt).unwrap();
    for (orig, back) in out.run.clients.iter().zip(&restored) {
        assert_eq!(orig.params, back.params);
        assert_eq!(orig.opt, back.opt);
        let (a, b) = (Scorer::new(&orig.params), Scorer::new(&back.params));
        for h in 0..orig.params.num_entities() {
            for r in 0..orig.params.num_relations() {
                let (x, y) = (a.tails(h, r), b.tails(h, r));
                assert!(x.iter().zip(&y).all(|(p, q)| p.to_bits() == q.to_bits()));
            }
        }
    }
    assert_eq!(ckpt.global, out.run.server.global);
}

#[test]
fn corrupt_checkpoint_is_a_runtime_error() {
    let dir = TempDir::new().unwrap();
    let out = commands::train(&ExperimentConfig { rounds_max: 1, ..toy_config(dir.path()) }, |_| {}).unwrap();
    let mut bytes = fs::read(out.checkpoint_path()).unwrap();
    bytes[3] ^= 0xff;
    let bad = dir.path().join("bad.bin");
    fs::write(&bad, &bytes).unwrap();
    let o = flest(&["eval", "--checkpoint", bad.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("magic"));

    let truncated = dir.path().join("short.bin");
    let good = fs::read(out.checkpoint_path()).unwrap();
    fs::write(&truncated, &good[..good.len() / 2]).unwrap();
    assert_eq!(flest(&["eval", "--checkpoint", truncated.to_str().unwrap()], &[]).status.code(), Some(2));
}

#[test]
fn hand_built_checkpoint_matches_hand_ranks() {
    // candidates score a > b > c > d > e; (a, r, c) is the only training triple
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("five.txt");
    fs::write(&data, "a\tr\tb\nb\tr\tc\nc\tr\td\nd\tr\te\na\tr\tc\n").unwrap();
    let mut config = ExperimentConfig {
        dataset: Some(data.to_str().unwrap().parse().unwrap()),
        num_clients: 1,
        rank: 1,
        valid_ratio: 0.0,
        test_ratio: 0.8,
        output_dir: dir.path().to_path_buf(),
        ..ExperimentConfig::default()
    };
    let raw = flest_core::data::load_triples(fs::read_to_string(&data).unwrap().as_bytes()).unwrap();
    let want_train = [flest_core::data::Triple::new(0, 0, 0)];
    let shard = (0..1000)
        .find_map(|seed| {
            let shard = partition(&raw, 1, seed, config.ratios()).unwrap().remove(0);
            let train = shard.split(Split::Train);
            let v = shard.vocab();
            let names = train.iter().map(|t| (v.entity_name(t.head).unwrap(), v.entity_name(t.tail).unwrap()));
            let ok = names.collect::<Vec<_>>() == vec![("a", "c")];
            ok.then(|| {
                config.partition_seed = seed;
                shard
            })
        })
        .unwrap();
    assert_eq!(want_train.len(), shard.split(Split::Train).len());
    let v = shard.vocab();
    let weight = |name: &str| 5.0 - (name.as_bytes()[0] - b'a') as f64;
    let loadings: Vec<f64> = v.entities().iter().map(|e| weight(e)).collect();
    let one = Matrix::identity(1);
    let params = ModelParams {
        rank: 1,
        s: 0.5,
        e_dic: one.clone(),
        r_dic: one.clone(),
        w1: one.clone(),
        w2: one.clone(),
        w3: one,
        e_loading: Matrix::from_vec(1, 5, loadings).unwrap(),
        r_loading: Matrix::from_rows(&[&[1.0]]),
    };
    let ckpt = Checkpoint {
        config_hash: config.hash(),
        config_text: config.render(),
        round: 0,
        global: SharedParams::from_params(&params, 0),
        clients: vec![ClientSnapshot {
            client_id: 0,
            seed: 0,
            epochs_done: 0,
            opt: AdamState::new(&params),
            params,
        }],
    };
    assert_eq!(checkpoint_config(&ckpt).unwrap(), config);
    let path = dir.path().join("hand.bin");
    ckpt.save(&path).unwrap();
    let ev = commands::eval(&path, Split::Test, Filtering::Filtered).unwrap();
    let want = EvalReport::from_ranks(&[2.0, 1.0, 3.0, 1.0, 4.0, 3.0, 5.0, 4.0]);
    assert_eq!(ev.aggregate, want);
    assert_eq!(ev.per_client, vec![want]);
}

#[test]
fn gradcheck_exit_codes() {
    let o = flest(&["gradcheck"], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let json_end = stdout(&o).find("\n}\n").unwrap() + 2;
    let report: Value = serde_json::from_str(&stdout(&o)[..json_end]).unwrap();
    assert_eq!(report["instances"], 24);
    assert!(report["stationary_max_grad"].as_f64().unwrap() < 1e-8);
    for p in report["per_param"].as_array().unwrap() {
        assert!(p["max_rel_error"].as_f64().unwrap() < 1e-4);
    }
    assert_eq!(flest(&["gradcheck", "--instances", "4", "--corrupt"], &[]).status.code(), Some(3));
}

#[test]
fn usage_and_config_errors_exit_one() {
    assert_eq!(flest(&["train", "--no-such-flag"], &[]).status.code(), Some(1));
    assert_eq!(flest(&["bogus"], &[]).status.code(), Some(1));
    assert_eq!(flest(&["train", "--rank", "many"], &[]).status.code(), Some(1));
    assert_eq!(flest(&["train", "--dropout", "1.5", "--dataset", "x"], &[]).status.code(), Some(1));
    let dir = TempDir::new().unwrap();
    let conf = dir.path().join("bad.conf");
    fs::write(&conf, "colour = red\n").unwrap();
    assert_eq!(flest(&["train", "--config", conf.to_str().unwrap()], &[]).status.code(), Some(1));
    assert_eq!(flest(&["--help"], &[]).status.code(), Some(0));
}

#[test]
fn precedence_flags_over_env_over_file() {
    let dir = TempDir::new().unwrap();
    let data = numbered_dataset(dir.path(), 30);
    let conf = dir.path().join("run.conf");
    let file_out = dir.path().join("from_file");
    let env_out = dir.path().join("from_env");
    let flag_out = dir.path().join("from_flag");
    fs::write(
        &conf,
        format!("dataset = {}\nnum_clients = 2\nrank = 4\noutput_dir = {}\n", data.display(), file_out.display()),
    )
    .unwrap();
    let c = conf.to_str().unwrap();
    let env = [("FLEST_OUTPUT_DIR", env_out.to_str().unwrap())];

    let o = flest(&["partition", "--config", c], &[]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("rank = 4\n"));
    assert!(file_out.join("partition/client_1.txt").exists());

    assert!(flest(&["partition", "--config", c], &env).status.success());
    assert!(env_out.join("partition/client_1.txt").exists());

    let o = flest(&["partition", "--config", c, "--output-dir", flag_out.to_str().unwrap(), "--rank", "6"], &env);
    assert!(o.status.success());
    assert!(stdout(&o).contains("rank = 6\n"));
    assert!(flag_out.join("partition/client_1.txt").exists());
}

#[test]
fn defaults_are_printed_at_startup() {
    let dir = TempDir::new().unwrap();
    let data = numbered_dataset(dir.path(), 20);
    let o = flest(&["partition", "--dataset", data.to_str().unwrap(), "--output-dir", dir.path().to_str().unwrap()], &[]);
    let text = stdout(&o);
    for line in ["rank = 200", "s = 0.5", "batch_size = 128", "lr = 0.0005", "dropout = 0.3", "local_epochs = 3", "rounds_max = 300"] {
        assert!(text.contains(&format!("{line}\n")), "missing `{line}`");
    }
}

#[test]
fn local_only_training_through_the_cli() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("local");
    let o = flest(
        &[
            "train", "--dataset", "synthetic:20:3:120:8:1", "--num-clients", "2", "--rank", "4", "--rounds-max", "2",
            "--eval-every", "1", "--mode", "local_only", "--output-dir", out.to_str().unwrap(),
        ],
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("mode = local_only\n"));
    assert_eq!(records(&out.join("metrics.jsonl")).len(), 2);
    let ckpt = Checkpoint::load(&out.join("checkpoint.bin")).unwrap();
    assert_eq!(checkpoint_config(&ckpt).unwrap().mode, Mode::LocalOnly);
}
