use std::sync::Arc;

use navlab::agent::{ArchitectureSpec, ConvLayer, Head, Network, RecurrentState, StepInput, Variant};
use navlab::autodiff::{write_checkpoint, Tape};
use navlab::maze::{
    generate_layout, Action, Cell, Event, FruitKind, MazeKind, RenderConfig, World, WorldConfig, GOAL_REWARD,
};
use navlab::targets::{loop_closure_labels, preprocess_depth, quantize_depth, LoopThresholds, BAND_EDGES};
use navlab::trainer::{a3c_loss, aux_loss, compute_returns, HyperParams, StepRecord};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_render() -> WorldConfig {
    WorldConfig { render: RenderConfig { width: 16, height: 16, max_range: 20.0 }, ..Default::default() }
}

fn bfs_count(layout: &navlab::maze::MazeLayout, start: Cell) -> usize {
    let mut seen = vec![false; layout.rows * layout.cols];
    let mut queue = std::collections::VecDeque::from([start]);
    seen[start.row * layout.cols + start.col] = true;
    let mut n = 0;
    while let Some(c) = queue.pop_front() {
        n += 1;
        let nbrs = [(c.row - 1, c.col), (c.row + 1, c.col), (c.row, c.col - 1), (c.row, c.col + 1)];
        for (r, k) in nbrs {
            let nc = Cell { row: r, col: k };
            if layout.is_floor(nc) && !seen[r * layout.cols + k] {
                seen[r * layout.cols + k] = true;
                queue.push_back(nc);
            }
        }
    }
    n
}

fn brute_force_labels(path: &[[f64; 2]], thr: &LoopThresholds) -> Vec<bool> {
    let d = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).hypot(a[1] - b[1]);
    (0..path.len())
        .map(|t| (0..t).any(|s| d(path[s], path[t]) <= thr.eta1 && (s..t).any(|u| d(path[u], path[t]) >= thr.eta2)))
        .collect()
}

fn walk(seed: u64, len: usize) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = [0.0f64, 0.0];
    (0..len)
        .map(|_| {
            p[0] += rng.random_range(-0.6..0.6);
            p[1] += rng.random_range(-0.6..0.6);
            p
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_floor_cell_reaches_every_other(seed in any::<u64>(), k in 0usize..MazeKind::ALL.len()) {
        let layout = generate_layout(MazeKind::ALL[k], seed);
        let n = layout.num_floor();
        for &c in layout.floor_cells().iter().step_by(7) {
            prop_assert_eq!(bfs_count(&layout, c), n);
        }
    }

    #[test]
    fn same_seeds_and_actions_give_identical_episodes(seed in any::<u64>(), actions in prop::collection::vec(0u8..8, 1..60)) {
        let layout = Arc::new(generate_layout(MazeKind::RandomSmall, seed));
        let mut a = World::new(layout.clone(), small_render());
        let mut b = World::new(layout, small_render());
        prop_assert_eq!(a.reset(seed ^ 1), b.reset(seed ^ 1));
        for &act in &actions {
            let (ra, rb) = (a.step(Action::new(act).unwrap()).unwrap(), b.step(Action::new(act).unwrap()).unwrap());
            prop_assert_eq!(ra.obs, rb.obs);
            prop_assert_eq!(ra.reward.to_bits(), rb.reward.to_bits());
            prop_assert_eq!(ra.events, rb.events);
        }
    }

    #[test]
    fn quantize_is_monotone_with_eight_bands(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(quantize_depth(lo).unwrap() <= quantize_depth(hi).unwrap());
        prop_assert!(quantize_depth(hi).unwrap() < 8);
    }

    #[test]
    fn loop_labels_match_the_double_loop(seed in any::<u64>(), len in 0usize..120) {
        let path = walk(seed, len);
        let thr = LoopThresholds::default();
        prop_assert_eq!(loop_closure_labels(&path, &thr), brute_force_labels(&path, &thr));
    }

    #[test]
    fn loop_labels_are_causal(seed in any::<u64>(), len in 1usize..150, cut in 0.0f64..1.0) {
        let path = walk(seed, len);
        let thr = LoopThresholds::default();
        let full = loop_closure_labels(&path, &thr);
        let k = (cut * len as f64) as usize;
        prop_assert_eq!(&loop_closure_labels(&path[..k], &thr)[..], &full[..k]);
    }

    #[test]
    fn returns_match_explicit_sums(rewards in prop::collection::vec(-10.0f64..10.0, 0..80), gamma in 0.0f64..=1.0, boot in -50.0f64..50.0) {
        let r = compute_returns(&rewards, gamma, boot);
        let t_end = rewards.len();
        for (t, &rt) in r.iter().enumerate() {
            let mut sum = gamma.powi((t_end - t) as i32) * boot;
            for k in 0..t_end - t {
                sum += gamma.powi(k as i32) * rewards[t + k];
            }
            prop_assert!((rt - sum).abs() <= 1e-10 * (1.0 + sum.abs()), "{} vs {}", rt, sum);
        }
    }
}

#[test]
fn band_edges_cover_the_unit_interval() {
    let bands: Vec<u8> = (0..=1000).map(|i| quantize_depth(i as f64 / 1000.0).unwrap()).collect();
    assert_eq!(bands[0], 0);
    assert_eq!(*bands.last().unwrap(), 7);
    let mut distinct = bands.clone();
    distinct.dedup();
    assert_eq!(distinct, (0..8).collect::<Vec<u8>>());
    assert_eq!(BAND_EDGES.len(), 9);
}

#[test]
fn far_plane_bytes_map_to_one() {
    let v = preprocess_depth(&[255u8; 16 * 32], 16, 32).unwrap();
    assert!(v.iter().all(|&x| x == 1.0));
}

#[test]
fn rewards_are_conserved_with_fruit() {
    let layout = Arc::new(generate_layout(MazeKind::StaticLarge, 2));
    let mut w = World::new(layout, small_render());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut budget_hit = false;
    for ep in 0..3 {
        w.reset(ep);
        let (mut total, mut goals, mut apples, mut berries) = (0.0f64, 0u32, 0u32, 0u32);
        while !w.done() {
            let (r, events) = w.step_without_render(Action::new(rng.random_range(0..8)).unwrap()).unwrap();
            total += r as f64;
            for e in events {
                match e {
                    Event::Goal { .. } => goals += 1,
                    Event::Fruit { fruit: FruitKind::Apple, .. } => apples += 1,
                    Event::Fruit { fruit: FruitKind::Strawberry, .. } => berries += 1,
                }
            }
        }
        budget_hit |= w.state().unwrap().env_step == 10_800;
        assert_eq!(total, (goals as f32 * GOAL_REWARD) as f64 + apples as f64 + 2.0 * berries as f64);
    }
    assert!(budget_hit);
}

#[test]
fn world_velocities_reconstruct_the_pose() {
    let layout = Arc::new(generate_layout(MazeKind::StaticSmall, 1));
    let mut w = World::new(layout, small_render());
    w.reset(3);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut action = Action::new(4).unwrap();
    for _ in 0..20_000 {
        if rng.random::<f64>() < 0.1 {
            action = Action::new(rng.random_range(0..8)).unwrap();
        }
        let p0 = w.state().unwrap().pose;
        let t = w.tick(action).unwrap();
        let p1 = w.state().unwrap().pose;
        if t.respawned {
            continue;
        }
        // egocentric velocity rotated back into the world frame
        let v = p1.relative_velocity();
        let (c, s) = (p1.heading.cos(), p1.heading.sin());
        let vx = v[0] as f64 * c - v[1] as f64 * s;
        let vy = v[0] as f64 * s + v[1] as f64 * c;
        assert!((p0.x + vx - p1.x).abs() < 1e-6 && (p0.y + vy - p1.y).abs() < 1e-6);
        assert!((p0.heading + v[3] as f64 - p1.heading).rem_euclid(std::f64::consts::TAU).min(
            (p1.heading - p0.heading - v[3] as f64).rem_euclid(std::f64::consts::TAU)) < 1e-6);
        if w.done() {
            w.reset(rng.random());
        }
    }
}

#[test]
fn textures_behind_the_camera_do_not_change_the_frame() {
    let mut layout = generate_layout(MazeKind::StaticLarge, 0);
    let cfg = RenderConfig { width: 32, height: 32, max_range: 20.0 };
    let (x, y) = (8.5, 5.5);
    let before = cfg.render(&layout, x, y, 0.0, &[]);
    for row in 0..layout.rows {
        for col in 0..6 {
            let c = Cell { row, col };
            if layout.is_wall(c) {
                for face in 0..4 {
                    let t = layout.texture(c, face);
                    layout.set_texture(c, face, (t + 1) % 8);
                }
            }
        }
    }
    let after = cfg.render(&layout, x, y, 0.0, &[]);
    assert_eq!(before.rgb, after.rgb);
    let turned_before = cfg.render(&generate_layout(MazeKind::StaticLarge, 0), x, y, std::f64::consts::PI, &[]);
    let turned_after = cfg.render(&layout, x, y, std::f64::consts::PI, &[]);
    assert_ne!(turned_before.rgb, turned_after.rgb);
}

fn head_spec(heads: Vec<Head>) -> ArchitectureSpec {
    ArchitectureSpec {
        variant: Variant::Nav2lstm,
        heads,
        lstm1_width: 6,
        lstm2_width: 10,
        fc_width: 12,
        aux_hidden: 5,
        image_width: 16,
        image_height: 16,
        conv: vec![ConvLayer { channels: 3, kernel: 4, stride: 4 }],
        ..Default::default()
    }
}

fn inputs(spec: &ArchitectureSpec, n: usize, seed: u64) -> Vec<(StepInput, navlab::targets::DepthTarget, bool)> {
    let layout = Arc::new(generate_layout(MazeKind::Mini, seed));
    let mut w = World::new(layout, small_render());
    let mut obs = w.reset(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let input = StepInput::from_observation(&obs, spec, 20.0).unwrap();
            let depth = navlab::targets::DepthTarget::from_raw(&obs.depth_raw, 16, 16, 20.0).unwrap();
            if w.done() {
                obs = w.reset(rng.random());
            } else {
                obs = w.step(Action::new(rng.random_range(0..8)).unwrap()).unwrap().obs;
            }
            (input, depth, rng.random())
        })
        .collect()
}

/// Gradients of the selected loss terms over a short unroll.
fn grads_of(net: &Network, params: &[f64], data: &[(StepInput, navlab::targets::DepthTarget, bool)], hp: &HyperParams, rl: bool, aux: bool) -> Vec<f64> {
    let mut tape = Tape::new(params);
    let b = net.bind(&mut tape).unwrap();
    let mut sv = net.state_vars(&mut tape, &RecurrentState::zeros(net.spec())).unwrap();
    let mut recs = Vec::new();
    for (i, (input, depth, label)) in data.iter().enumerate() {
        let out = net.step(&mut tape, &b, input, &sv, false).unwrap();
        recs.push(StepRecord {
            policy: out.policy,
            value: out.value,
            action: (i % 8) as u8,
            reward: if i % 3 == 0 { 1.0 } else { 0.0 },
            d1: out.d1,
            d2: out.d2,
            loop_logit: out.loop_logit,
            depth: Some(depth.clone()),
            loop_label: Some(*label),
        });
        sv = out.state;
    }
    let rewards: Vec<f64> = recs.iter().map(|r| r.reward as f64).collect();
    let returns = compute_returns(&rewards, hp.gamma, 0.5);
    let mut terms = Vec::new();
    if rl {
        terms.push((a3c_loss(&mut tape, &recs, &returns, hp).unwrap(), 1.0));
    }
    if aux {
        terms.push((aux_loss(&mut tape, &recs, hp, net.spec().depth_mode).unwrap(), 1.0));
    }
    let total = tape.weighted_sum(&terms).unwrap();
    let mut g = vec![0.0; params.len()];
    tape.backward(total, &mut g).unwrap();
    g
}

#[test]
fn total_gradient_is_the_sum_of_component_gradients() {
    let spec = head_spec(vec![Head::D1, Head::D2, Head::L]);
    let net = Network::build(&spec).unwrap();
    let params = net.init_params(&mut ChaCha8Rng::seed_from_u64(2)).cast::<f64>().flat;
    let data = inputs(&spec, 12, 5);
    let hp = HyperParams { beta_entropy: 0.01, ..Default::default() };
    let all = grads_of(&net, &params, &data, &hp, true, true);
    let rl = grads_of(&net, &params, &data, &hp, true, false);
    let aux = grads_of(&net, &params, &data, &hp, false, true);
    for i in 0..all.len() {
        assert!((all[i] - rl[i] - aux[i]).abs() <= 1e-10 * (1.0 + all[i].abs()), "param {i}");
    }
}

fn slot_grads<'a>(net: &Network, g: &'a [f64], name: &str) -> &'a [f64] {
    &g[net.registry().get(name).unwrap().range()]
}

#[test]
fn auxiliary_gradients_stay_on_their_paths() {
    let data_spec = head_spec(vec![Head::D1]);
    let data = inputs(&data_spec, 8, 7);
    let only = |beta_d1: f64, beta_l: f64| HyperParams { beta_d1, beta_d2: 0.0, beta_l, ..Default::default() };

    let spec = head_spec(vec![Head::D1, Head::L]);
    let net = Network::build(&spec).unwrap();
    let params = net.init_params(&mut ChaCha8Rng::seed_from_u64(3)).cast::<f64>().flat;

    let d1 = grads_of(&net, &params, &data, &only(1.0, 0.0), false, true);
    for name in ["lstm1.w", "lstm1.b", "lstm2.w", "lstm2.b", "loop.hidden.w", "policy.w", "value.w"] {
        assert!(slot_grads(&net, &d1, name).iter().all(|&v| v == 0.0), "D1 loss reached {name}");
    }
    assert!(slot_grads(&net, &d1, "d1.out.w").iter().any(|&v| v != 0.0));
    assert!(slot_grads(&net, &d1, "conv1.w").iter().any(|&v| v != 0.0));

    let l = grads_of(&net, &params, &data, &only(0.0, 1.0), false, true);
    for name in ["d1.hidden.w", "d1.hidden.b", "d1.out.w", "d1.out.b", "policy.w", "value.w"] {
        assert!(slot_grads(&net, &l, name).iter().all(|&v| v == 0.0), "loop loss reached {name}");
    }
    assert!(slot_grads(&net, &l, "lstm2.w").iter().any(|&v| v != 0.0));
}

#[test]
fn chunked_unroll_matches_whole_sequence() {
    let spec = head_spec(vec![Head::D2]);
    let net = Network::build(&spec).unwrap();
    let p32 = net.init_params(&mut ChaCha8Rng::seed_from_u64(9));
    let p64 = p32.cast::<f64>();
    let data = inputs(&spec, 100, 11);

    let run = |params: &[f64], chunks: &[std::ops::Range<usize>]| {
        let mut state = RecurrentState::zeros(&spec);
        let mut outs = Vec::new();
        for r in chunks {
            let mut tape = Tape::new(params);
            let b = net.bind(&mut tape).unwrap();
            let mut sv = net.state_vars(&mut tape, &state).unwrap();
            for (input, _, _) in &data[r.clone()] {
                let o = net.step(&mut tape, &b, input, &sv, false).unwrap();
                outs.push(tape.value(o.policy).to_vec());
                sv = o.state;
            }
            state = Network::read_state(&tape, &sv);
        }
        (outs, state)
    };
    let (whole, sw) = run(&p64.flat, &[0..100]);
    let (split, ss) = run(&p64.flat, &[0..50, 50..100]);
    assert_eq!(whole, split);
    assert_eq!(sw, ss);

    let mut state = RecurrentState::zeros(&spec);
    for (i, (input, _, _)) in data.iter().enumerate() {
        let (o, next) = net.forward(&p32.flat, input, &state).unwrap();
        state = next;
        for (a, b) in o.policy_logits.iter().zip(&whole[i]) {
            assert!((*a as f64 - b).abs() < 1e-5, "step {i}");
        }
    }
}

#[test]
fn decoder_training_leaves_the_checkpoint_untouched() {
    use navlab::analysis::{collect_dataset, train_position_decoder, DecoderConfig, FeatureSource};
    let spec = head_spec(vec![]);
    let net = Network::build(&spec).unwrap();
    let params = net.init_params(&mut ChaCha8Rng::seed_from_u64(1));
    let mut before = Vec::new();
    write_checkpoint(&mut before, &params).unwrap();
    let layout = Arc::new(generate_layout(MazeKind::Mini, 0));
    let ds = collect_dataset(&net, &params.flat, layout, small_render(), 4, 2, FeatureSource::Top).unwrap();
    let again = collect_dataset(&net, &params.flat, Arc::new(generate_layout(MazeKind::Mini, 0)), small_render(), 4, 2, FeatureSource::Top).unwrap();
    assert_eq!(ds, again);
    assert!(ds.labels.iter().all(|&l| l < 25));
    train_position_decoder(&ds, 25, &DecoderConfig { max_epochs: 50, ..Default::default() }).unwrap();
    let mut after = Vec::new();
    write_checkpoint(&mut after, &params).unwrap();
    assert_eq!(before, after);
}
