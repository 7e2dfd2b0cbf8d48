mod common;

use std::collections::BTreeSet;
use std::io::Write;

use fedres::datagen::{
    gen_appendix_c, gen_example2, parse_libsvm, partition_federated, read_libsvm_file, write_libsvm, Example2,
    LabeledPoint, MulticlassCorpus, PartitionConfig,
};
use fedres::Error;
use proptest::prelude::*;

fn toy_corpus(classes: i64, per_class: usize, dim: usize) -> MulticlassCorpus {
    let mut samples = Vec::new();
    let mut r = common::rng(99);
    for c in 0..classes {
        for _ in 0..per_class {
            let line = samples.len() + 1;
            samples.push(LabeledPoint {
                label: c,
                x: common::vec_in(&mut r, dim, 1.0),
                line,
            });
        }
    }
    MulticlassCorpus { samples, dim }
}

#[test]
fn libsvm_parser_handles_comments_gaps_and_qid() {
    let text = "# header\n3 1:0.5 4:-2\n\n-1 qid:7 2:1e-1 # trailing\n+2 1:1\n";
    let c = parse_libsvm(text).unwrap();
    assert_eq!(c.dim, 4);
    assert_eq!(c.samples.len(), 3);
    assert_eq!(c.samples[0].x, vec![0.5, 0.0, 0.0, -2.0]);
    assert_eq!(c.samples[1].label, -1);
    assert_eq!(c.samples[1].x, vec![0.0, 0.1, 0.0, 0.0]);
    assert_eq!(c.samples[2].line, 5);
    assert_eq!(c.classes(), vec![-1, 2, 3]);
}

#[test]
fn libsvm_parser_reports_the_bad_line() {
    for bad in ["1 0:1\n", "1 a:1\n", "1 1:x\n", "1.5 1:1\n", "1 1:1\nfoo 2:2\n"] {
        match parse_libsvm(bad) {
            Err(Error::Parse { line, .. }) => assert!(line >= 1),
            other => panic!("{bad:?} gave {other:?}"),
        }
    }
}

proptest! {
    #[test]
    fn libsvm_round_trip(rows in proptest::collection::vec((-5i64..5, proptest::collection::vec(-10.0f64..10.0, 3)), 1..20)) {
        let corpus = MulticlassCorpus {
            samples: rows
                .iter()
                .enumerate()
                .map(|(k, (l, x))| LabeledPoint { label: *l, x: x.clone(), line: k + 1 })
                .collect(),
            dim: 3,
        };
        let back = parse_libsvm(&write_libsvm(&corpus)).unwrap();
        prop_assert_eq!(back.samples.len(), corpus.samples.len());
        for (a, b) in back.samples.iter().zip(&corpus.samples) {
            prop_assert_eq!(a.label, b.label);
            // zero columns may be dropped on write, so compare padded values
            for k in 0..3 {
                prop_assert_eq!(a.x.get(k).copied().unwrap_or(0.0), b.x[k]);
            }
        }
    }
}

#[test]
fn gzip_files_are_detected() {
    let text = "1 1:1 2:2\n2 2:3\n";
    let dir = std::env::temp_dir().join(format!("fedres-gz-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let plain = dir.join("a.svm");
    std::fs::write(&plain, text).unwrap();
    let gz = dir.join("a.svm.gz");
    let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
    enc.write_all(text.as_bytes()).unwrap();
    std::fs::write(&gz, enc.finish().unwrap()).unwrap();
    assert_eq!(read_libsvm_file(&plain).unwrap(), read_libsvm_file(&gz).unwrap());
    assert!(matches!(read_libsvm_file(&dir.join("missing")), Err(Error::Io(_))));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn partition_properties_hold_across_seeds() {
    let corpus = toy_corpus(8, 25, 6);
    for seed in 0..50 {
        let ds = partition_federated(&corpus, &PartitionConfig::new(4, 5), seed).unwrap();
        assert_eq!(ds.merged_classes.len(), 2);
        assert_eq!(ds.num_clients(), 4);
        let mut seen = BTreeSet::new();
        let mut negatives = BTreeSet::new();
        for c in &ds.clients {
            for l in c.train_lines.iter().chain(&c.test_lines) {
                assert!(seen.insert(*l), "line {l} assigned twice");
            }
            let pos = c.train.iter().filter(|s| s.y > 0.0).count();
            assert_eq!(pos, c.train.len() - pos);
            assert_eq!(pos, ds.per_label);
            let tpos = c.test.iter().filter(|s| s.y > 0.0).count();
            assert_eq!(tpos, c.test.len() - tpos);
            assert!(c.train.len() <= 10);
            let neg = c.negative_class.unwrap();
            assert!(!ds.merged_classes.contains(&neg));
            negatives.insert(neg);
            for (s, l) in c.train.iter().zip(&c.train_lines) {
                let src = &corpus.samples[l - 1];
                assert_eq!(s.y > 0.0, ds.merged_classes.contains(&src.label));
            }
        }
        assert_eq!(ds.global_index.len(), 3);
        let all: BTreeSet<usize> = ds.global_index.iter().chain(&ds.local_index).copied().collect();
        assert_eq!(all.len(), 6);
    }
}

#[test]
fn partition_is_seeded() {
    let corpus = toy_corpus(8, 25, 6);
    let a = partition_federated(&corpus, &PartitionConfig::new(4, 5), 3).unwrap();
    let b = partition_federated(&corpus, &PartitionConfig::new(4, 5), 3).unwrap();
    let c = partition_federated(&corpus, &PartitionConfig::new(4, 5), 4).unwrap();
    assert_eq!(a.manifest(), b.manifest());
    assert_ne!(a.manifest(), c.manifest());
    assert!(a.manifest().starts_with("client,line,role\n"));
}

#[test]
fn partition_rejects_too_few_classes_or_clients() {
    let corpus = toy_corpus(4, 25, 3);
    assert!(matches!(partition_federated(&corpus, &PartitionConfig::new(2, 5), 0), Err(Error::Config(_))));
    let corpus = toy_corpus(8, 5, 3);
    assert!(partition_federated(&corpus, &PartitionConfig::new(50, 5), 0).is_err());
}

#[test]
fn streams_cycle_through_fresh_permutations() {
    let corpus = toy_corpus(8, 25, 6);
    let ds = partition_federated(&corpus, &PartitionConfig::new(4, 5), 1).unwrap();
    let n = ds.clients[0].train.len();
    let st = ds.streams(3 * n, 8).unwrap();
    for epoch in 0..3 {
        let chunk = &st[0][epoch * n..(epoch + 1) * n];
        for s in &ds.clients[0].train {
            assert_eq!(chunk.iter().filter(|x| *x == s).count(), ds.clients[0].train.iter().filter(|x| *x == s).count());
        }
    }
    assert_eq!(st, ds.streams(3 * n, 8).unwrap());
}

#[test]
fn example2_shift_moments() {
    let cfg = Example2 {
        clients: 2,
        u_global: vec![0.0; 4],
        v: vec![0.5, -0.5, 0.5, -0.5],
        noise_std: 0.0,
        train_per_client: 20_000,
        test_per_client: 0,
    };
    let ds = gen_example2(&cfg, 5).unwrap();
    // Central's best constant predictor is 0, whose loss is E[(v.x)^2] = |v|^2 = 1.
    for c in &ds.clients {
        let m: f64 = c.train.iter().map(|s| s.y * s.y).sum::<f64>() / c.train.len() as f64;
        assert!((m - 1.0).abs() < 0.05, "{m}");
    }
    let first = &ds.clients[0].train[0];
    let second = &ds.clients[1].train[0];
    assert!((first.y - common::ip(&cfg.v, &first.x_local)).abs() < 1e-12);
    assert!((second.y + common::ip(&cfg.v, &second.x_local)).abs() < 1e-12);
    let odd = gen_example2(&Example2 { clients: 3, train_per_client: 1, ..cfg.clone() }, 0).unwrap();
    let s = &odd.clients[1].train[0];
    assert!((s.y + common::ip(&cfg.v, &s.x_local)).abs() < 1e-12);
    assert!(gen_example2(&Example2 { clients: 0, ..cfg }, 0).is_err());
}

#[test]
fn appendix_c_stream_is_fit_exactly_by_the_optimum() {
    let s = gen_appendix_c(5000, 2);
    let mut eps2 = 0.0;
    for x in &s {
        let r = x.y - common::ip(&[0.0, 1.0], &x.x_global) - common::ip(&[0.0, 1.0], &x.x_local);
        assert!(r.abs() < 1e-12);
        eps2 += (x.x_global[0] - (1.0 - x.x_local[0])).powi(2);
    }
    // noise variance 0.25
    assert!((eps2 / 5000.0 - 0.25).abs() < 0.02);
}
