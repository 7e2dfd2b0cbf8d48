mod common;

use common::{ip, ls_fit, random_streams};
use fedres::datagen::gen_appendix_c;
use fedres::delay::DelayConfig;
use fedres::erm::{run_fedres_erm, run_fictitious_play, CounterpartPolicy, ErmConfig, ErmFederation};
use fedres::federation::Federation;
use fedres::model::Sample;

const BIG: f64 = 1e6;

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
}

fn init_cfg(delays: DelayConfig) -> ErmConfig {
    let mut cfg = ErmConfig::new(2, vec![2], BIG, delays);
    cfg.init_global = Some(vec![1.0, 0.0]);
    cfg.init_local = Some(vec![vec![1.0, 0.0]]);
    cfg
}

// Jacobi form: both sides refit on s <= t against the other's model from t.
fn jacobi_erm(stream: &[Sample], rounds: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let (mut g, mut l) = (vec![1.0, 0.0], vec![1.0, 0.0]);
    let mut out = vec![(g.clone(), l.clone())];
    for t in 1..=rounds {
        let past = &stream[..t];
        let g_rows: Vec<_> = past.iter().map(|s| (s.x_global.clone(), ip(&l, &s.x_local), s.y)).collect();
        let l_rows: Vec<_> = past.iter().map(|s| (s.x_local.clone(), ip(&g, &s.x_global), s.y)).collect();
        g = ls_fit(&g_rows, 2);
        l = ls_fit(&l_rows, 2);
        out.push((g.clone(), l.clone()));
    }
    out
}

// Fictitious play: each side refits against the other's past models.
fn fictitious_reference(stream: &[Sample], rounds: usize) -> (Vec<(Vec<f64>, Vec<f64>)>, Vec<f64>) {
    let (mut g, mut l) = (vec![1.0, 0.0], vec![1.0, 0.0]);
    let mut hist = vec![(g.clone(), l.clone())];
    let mut losses = Vec::new();
    for t in 1..=rounds {
        let s = &stream[t - 1];
        let r = s.y - ip(&g, &s.x_global) - ip(&l, &s.x_local);
        losses.push(r * r);
        let g_rows: Vec<_> = (1..=t)
            .map(|k| {
                let x = &stream[k - 1];
                (x.x_global.clone(), ip(&hist[k - 1].1, &x.x_local), x.y)
            })
            .collect();
        let l_rows: Vec<_> = (1..=t)
            .map(|k| {
                let x = &stream[k - 1];
                (x.x_local.clone(), ip(&hist[k - 1].0, &x.x_global), x.y)
            })
            .collect();
        g = ls_fit(&g_rows, 2);
        l = ls_fit(&l_rows, 2);
        hist.push((g.clone(), l.clone()));
    }
    (hist, losses)
}

#[test]
fn fictitious_play_matches_transcription() {
    for seed in 0..3 {
        let stream = gen_appendix_c(150, seed);
        let (hist, losses) = fictitious_reference(&stream, 150);
        let mut fed = ErmFederation::new(&{
            let mut c = init_cfg(DelayConfig::zero(1));
            c.policy = CounterpartPolicy::Frozen;
            c
        })
        .unwrap();
        for t in 1..=150 {
            let tr = fed.step(&[std::slice::from_ref(&stream[t - 1])]).unwrap();
            assert!((tr[0].loss - losses[t - 1]).abs() <= 1e-7 * (1.0 + losses[t - 1]), "round {t}");
            let (_, l) = fed.client_models(0);
            assert!(close(&l.w, &hist[t - 1].1, 1e-6), "local at {t}: {:?} vs {:?}", l.w, hist[t - 1].1);
            assert!(close(&fed.server_model().w, &hist[t].0, 1e-6), "global at {t}");
        }
    }
}

#[test]
fn erm_with_unit_downlink_follows_jacobi_transcription() {
    let stream = gen_appendix_c(150, 7);
    let hist = jacobi_erm(&stream, 150);
    let mut fed = ErmFederation::new(&init_cfg(DelayConfig::uniform(1, 0, 1))).unwrap();
    for t in 1..=150 {
        fed.step(&[std::slice::from_ref(&stream[t - 1])]).unwrap();
        assert!(close(&fed.local(0).w, &hist[t - 1].1, 1e-6), "local at {t}");
        assert!(close(&fed.server_model().w, &hist[t].0, 1e-6), "global at {t}");
    }
}

#[test]
fn erm_escapes_the_bad_start_and_fictitious_play_does_not() {
    let stream = gen_appendix_c(3000, 1);
    let cfg = init_cfg(DelayConfig::zero(1));
    let erm = run_fedres_erm(std::slice::from_ref(&stream), &cfg, 3000).unwrap();
    let fp = run_fictitious_play(std::slice::from_ref(&stream), &cfg, 3000).unwrap();
    let dist = |w: &[f64]| (w[0] * w[0] + (w[1] - 1.0) * (w[1] - 1.0)).sqrt();
    assert!(dist(&erm.global.w) < 1e-3);
    assert!(dist(&fp.global.w) > 0.3);
}

fn empirical(streams: &[Vec<Sample>], upto: usize, g: &[f64], locals: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (i, st) in streams.iter().enumerate() {
        for s in &st[..upto] {
            let r = s.y - ip(g, &s.x_global) - ip(&locals[i], &s.x_local);
            total += r * r;
        }
    }
    total
}

#[test]
fn zero_delay_passes_never_increase_the_empirical_loss() {
    let lds = [2, 1, 3];
    let streams = random_streams(31, 3, &lds, 60);
    let cfg = ErmConfig::new(3, lds.to_vec(), BIG, DelayConfig::zero(3));
    let mut fed = ErmFederation::new(&cfg).unwrap();
    let mut locals: Vec<Vec<f64>> = lds.iter().map(|&d| vec![0.0; d]).collect();
    let mut global = vec![0.0; 3];
    for t in 1..=60 {
        let batches: Vec<&[Sample]> = streams.iter().map(|s| &s[t - 1..t]).collect();
        fed.step(&batches).unwrap();
        let new_locals: Vec<Vec<f64>> = (0..3).map(|i| fed.local(i).w.clone()).collect();
        // client pass on s < t against the fetched global model
        let before = empirical(&streams, t - 1, &global, &locals);
        let after = empirical(&streams, t - 1, &global, &new_locals);
        assert!(after <= before + 1e-9 * (1.0 + before), "client pass at {t}");
        // server pass on s <= t against the new local models
        let new_global = fed.server_model().w.clone();
        let before = empirical(&streams, t, &global, &new_locals);
        let after = empirical(&streams, t, &new_global, &new_locals);
        assert!(after <= before + 1e-9 * (1.0 + before), "server pass at {t}");
        locals = new_locals;
        global = new_global;
    }
}

#[test]
fn empty_archive_plays_the_initial_model() {
    let stream = gen_appendix_c(1, 3);
    let out = run_fedres_erm(std::slice::from_ref(&stream), &init_cfg(DelayConfig::uniform(1, 2, 2)), 1).unwrap();
    let s = &stream[0];
    let r = s.y - ip(&[1.0, 0.0], &s.x_global) - ip(&[1.0, 0.0], &s.x_local);
    assert_eq!(out.traces[0].loss, r * r);
}

#[test]
fn erm_rejects_per_client_delays() {
    let cfg = ErmConfig::new(
        1,
        vec![1, 1],
        1.0,
        DelayConfig {
            uplink: vec![0, 1],
            downlink: vec![0, 0],
        },
    );
    assert!(ErmFederation::new(&cfg).is_err());
}

#[test]
fn delayed_erm_stays_inside_the_ball() {
    let lds = [2, 2];
    let streams = random_streams(17, 2, &lds, 40);
    let cfg = ErmConfig::new(2, lds.to_vec(), 0.3, DelayConfig::uniform(2, 2, 3));
    let out = run_fedres_erm(&streams, &cfg, 40).unwrap();
    assert!(ip(&out.global.w, &out.global.w).sqrt() <= 0.3 + 1e-10);
    for (g, l) in &out.held {
        assert!(ip(&g.w, &g.w).sqrt() <= 0.3 + 1e-10);
        assert!(ip(&l.w, &l.w).sqrt() <= 0.3 + 1e-10);
    }
}
