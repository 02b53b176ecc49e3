use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symdepth_core::attention::{
    relative_bias_matrix, relative_index, table_rows, AttentionConfig, CrossAttention, FusedMbConv, LgCat,
    PartitionedAttention, SymbioticTransformer,
};
use symdepth_core::params::{Builder, ParamStore};
use symdepth_core::partition::PartitionSpec;
use symdepth_core::tensor::init::uniform;
use symdepth_core::tensor::{grad_check, GradCheckOptions, Tape, Tensor};

fn cfg(heads: usize, head_dim: usize, window: usize, grid: usize, ns: usize) -> AttentionConfig {
    AttentionConfig { heads, head_dim, window: (window, window), grid: (grid, grid), ns }
}

/// Redraws parameters in ±0.5, LayerNorm gains around 1.
fn randomize(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for (name, t) in store.iter_mut() {
        let centre = if name.ends_with(".gamma") { 1.0 } else { 0.0 };
        t.data_mut().iter_mut().for_each(|v| *v = centre + rng.random_range(-0.5..0.5));
    }
}

fn zero_bias(store: &mut ParamStore) {
    store.zero_where(|n| n.ends_with("rel_bias"));
}

fn build<T>(seed: u64, f: impl FnOnce(&mut Builder<'_, ChaCha8Rng>) -> T) -> (T, ParamStore, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let module = f(&mut Builder::new(&mut store, &mut rng));
    randomize(&mut store, &mut rng);
    (module, store, rng)
}

#[test]
fn relative_index_brute_force_seven_by_seven() {
    let (h, w) = (7, 7);
    assert_eq!(table_rows(h, w), 169);
    let idx = relative_index(h, w);
    let l = h * w;
    let mut by_offset = std::collections::HashMap::new();
    for q in 0..l {
        for k in 0..l {
            let offset = ((q / w) as i64 - (k / w) as i64, (q % w) as i64 - (k % w) as i64);
            let row = idx[q * l + k];
            assert!(row < 169);
            // one row per relative offset, in both directions
            assert_eq!(*by_offset.entry(offset).or_insert(row), row);
        }
    }
    assert_eq!(by_offset.len(), 169);
    let rows: std::collections::HashSet<_> = by_offset.values().collect();
    assert_eq!(rows.len(), 169);
}

#[test]
fn bias_matrix_small_cases() {
    let t = Tensor::new([1, 2], vec![0.7, -0.2]).unwrap();
    let b = relative_bias_matrix(&t, (1, 1)).unwrap();
    assert_eq!(b.data(), &[0.7, -0.2]);
    assert_eq!(relative_bias_matrix(&Tensor::zeros([9, 3]), (2, 2)).unwrap(), Tensor::zeros([3, 4, 4]));
    assert!(relative_bias_matrix(&Tensor::zeros([9, 3]), (3, 3)).is_err());
}

#[test]
fn single_position_returns_projected_value() {
    let c = cfg(2, 2, 1, 1, 1);
    let (ca, store, mut rng) = build(1, |b| CrossAttention::new(b, "ca", &c, (1, 1)).unwrap());
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let (q, kv) = (uniform([3, 1, 4], -1.0, 1.0, &mut rng), uniform([3, 1, 4], -1.0, 1.0, &mut rng));
    let out = ca.forward(&p, tape.constant(q), tape.constant(kv.clone())).unwrap().value();
    let expect = ca.wo.forward(&p, ca.wv.forward(&p, tape.constant(kv)).unwrap()).unwrap().value();
    assert!(out.max_abs_diff(&expect) < 1e-14);
}

#[test]
fn identical_keys_split_attention_evenly() {
    let c = cfg(1, 3, 1, 1, 1);
    let (ca, mut store, mut rng) = build(2, |b| CrossAttention::new(b, "ca", &c, (1, 2)).unwrap());
    zero_bias(&mut store);
    let row = uniform([1, 1, 3], -1.0, 1.0, &mut rng);
    let kv = Tensor::from_fn([1, 2, 3], |i| row.at(&[0, 0, i[2]]));
    let q = uniform([1, 2, 3], -1.0, 1.0, &mut rng);
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let tr = ca.trace(&p, tape.constant(q), tape.constant(kv)).unwrap();
    assert!(tr.weights.value().data().iter().all(|&w| w == 0.5));
}

#[test]
fn zero_query_gives_uniform_weights() {
    let c = cfg(2, 3, 1, 1, 1);
    let (ca, mut store, mut rng) = build(3, |b| CrossAttention::new(b, "ca", &c, (2, 3)).unwrap());
    zero_bias(&mut store);
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let kv = uniform([2, 6, 6], -1.0, 1.0, &mut rng);
    let tr = ca.trace(&p, tape.constant(Tensor::zeros([2, 6, 6])), tape.constant(kv)).unwrap();
    assert!(tr.weights.value().data().iter().all(|&w| w == 1.0 / 6.0));
}

#[test]
fn zero_output_projection_is_pure_residual() {
    let c = cfg(2, 4, 2, 2, 1);
    for spec in [c.window_spec(), c.grid_spec()] {
        let (layer, mut store, mut rng) = build(4, |b| PartitionedAttention::new(b, "pa", &c, spec, true).unwrap());
        store.zero_where(|n| n == layer.attn.wo.weight);
        let (x, y) = (uniform([1, 4, 4, 8], -1.0, 1.0, &mut rng), uniform([1, 4, 4, 8], -1.0, 1.0, &mut rng));
        let tape = Tape::new();
        let out = layer.forward(&store.bind_frozen(&tape), tape.constant(x), tape.constant(y.clone())).unwrap();
        assert_eq!(*out.value(), y);
    }
}

/// Reference: gather each group by explicit index loops, attend, scatter back.
fn naive_partitioned(layer: &PartitionedAttention, store: &ParamStore, x: &Tensor, y: &Tensor) -> Tensor {
    let [b, hh, ww, c] = x.dims4("naive").unwrap();
    let PartitionSpec { kind, h, w } = layer.spec;
    let (sh, sw) = (hh / h, ww / w);
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let mut out = y.clone();
    let window = matches!(kind, symdepth_core::partition::PartitionKind::Window);
    for bi in 0..b {
        for gi in 0..sh {
            for gj in 0..sw {
                // position (p, q) inside group (gi, gj)
                let src = |pi: usize, qj: usize| {
                    if window {
                        (gi * h + pi, gj * w + qj)
                    } else {
                        (pi * sh + gi, qj * sw + gj)
                    }
                };
                let gather = |t: &Tensor| {
                    Tensor::from_fn([1, h * w, c], |i| {
                        let (r, s) = src(i[1] / w, i[1] % w);
                        t.at(&[bi, r, s, i[2]])
                    })
                };
                let xq = layer.normalize_query(&p, tape.constant(gather(x))).unwrap();
                let yk = layer.norm_kv.forward(&p, tape.constant(gather(y))).unwrap();
                let a = layer.attn.forward(&p, xq, yk).unwrap().value();
                for pos in 0..h * w {
                    let (r, s) = src(pos / w, pos % w);
                    for ci in 0..c {
                        let at = ((bi * hh + r) * ww + s) * c + ci;
                        out.data_mut()[at] += a.at(&[0, pos, ci]);
                    }
                }
            }
        }
    }
    out
}

#[test]
fn block_attention_matches_per_window_loop() {
    let c = cfg(2, 4, 7, 7, 1);
    let (layer, store, mut rng) = build(5, |b| PartitionedAttention::new(b, "pa", &c, c.window_spec(), true).unwrap());
    let (x, y) = (uniform([1, 14, 14, 8], -1.0, 1.0, &mut rng), uniform([1, 14, 14, 8], -1.0, 1.0, &mut rng));
    let tape = Tape::new();
    let got = layer.forward(&store.bind_frozen(&tape), tape.constant(x.clone()), tape.constant(y.clone())).unwrap();
    assert!(got.value().max_abs_diff(&naive_partitioned(&layer, &store, &x, &y)) < 1e-12);
}

#[test]
fn grid_attention_matches_strided_gather() {
    let c = cfg(2, 4, 2, 2, 1);
    let (layer, store, mut rng) = build(6, |b| PartitionedAttention::new(b, "pa", &c, c.grid_spec(), true).unwrap());
    let (x, y) = (uniform([2, 8, 6, 8], -1.0, 1.0, &mut rng), uniform([2, 8, 6, 8], -1.0, 1.0, &mut rng));
    let tape = Tape::new();
    let got = layer.forward(&store.bind_frozen(&tape), tape.constant(x.clone()), tape.constant(y.clone())).unwrap();
    assert!(got.value().max_abs_diff(&naive_partitioned(&layer, &store, &x, &y)) < 1e-12);
}

#[test]
fn single_group_is_global_attention() {
    let c = cfg(2, 4, 4, 4, 1);
    for spec in [c.window_spec(), c.grid_spec()] {
        let (layer, store, mut rng) = build(7, |b| PartitionedAttention::new(b, "pa", &c, spec, true).unwrap());
        let (x, y) = (uniform([1, 4, 4, 8], -1.0, 1.0, &mut rng), uniform([1, 4, 4, 8], -1.0, 1.0, &mut rng));
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let got = layer.forward(&p, tape.constant(x.clone()), tape.constant(y.clone())).unwrap().value();
        let xq = layer.normalize_query(&p, tape.constant(x.reshape([1, 16, 8]).unwrap())).unwrap();
        let yk = layer.norm_kv.forward(&p, tape.constant(y.reshape([1, 16, 8]).unwrap())).unwrap();
        let global = layer.attn.forward(&p, xq, yk).unwrap().value().reshape([1, 4, 4, 8]).unwrap();
        let expect = y.zip_map(&global, |a, b| a + b).unwrap();
        assert!(got.max_abs_diff(&expect) < 1e-14);
    }
}

#[test]
fn fused_mbconv_cases() {
    let (m, mut store, mut rng) = build(8, |b| FusedMbConv::new(b, "mb", 8).unwrap());
    let y = uniform([1, 4, 4, 8], -1.0, 1.0, &mut rng);
    let tape = Tape::new();

    // constant input: interior pixels agree; borders see the zero padding
    let constant = Tensor::full([1, 4, 4, 8], 0.3);
    let out = m.forward(&store.bind_frozen(&tape), tape.constant(constant.clone())).unwrap().value();
    for ci in 0..8 {
        let v = out.at(&[0, 1, 1, ci]);
        for (i, j) in [(1, 2), (2, 1), (2, 2)] {
            assert!((out.at(&[0, i, j, ci]) - v).abs() < 1e-14);
        }
    }
    // with a centre-tap depthwise kernel every sub-op preserves constancy
    let mut centred = store.clone();
    let k = centred.get_mut(&m.depthwise.kernel).unwrap();
    for (idx, v) in k.data_mut().iter_mut().enumerate() {
        if idx / 8 != 4 {
            *v = 0.0;
        }
    }
    let out = m.forward(&centred.bind_frozen(&tape), tape.constant(constant)).unwrap().value();
    for px in out.data().chunks(8) {
        assert!(px.iter().zip(&out.data()[..8]).all(|(a, b)| (a - b).abs() < 1e-14));
    }

    // zero excitation weights: gate is exactly one half
    let mut gated = store.clone();
    gated.zero_where(|n| n.starts_with("mb.se_expand"));
    let g = m.se_gate(&gated.bind_frozen(&tape), tape.constant(y.clone())).unwrap().value();
    assert!(g.data().iter().all(|&v| v == 0.5));

    // zero pointwise conv: identity
    store.zero_where(|n| n.starts_with("mb.pw"));
    let out = m.forward(&store.bind_frozen(&tape), tape.constant(y.clone())).unwrap().value();
    assert_eq!(*out, y);
}

#[test]
fn lg_cat_residual_identity_and_round_count() {
    let one = cfg(2, 4, 2, 2, 1);
    let two = cfg(2, 4, 2, 2, 2);
    let (m2, mut s2, mut rng) = build(9, |b| LgCat::new(b, "lg", &two).unwrap());
    let (x, y) = (uniform([1, 4, 4, 8], -1.0, 1.0, &mut rng), uniform([1, 4, 4, 8], -1.0, 1.0, &mut rng));

    // one round built from the first round's parameters of the two-round block
    let mut rng1 = ChaCha8Rng::seed_from_u64(0);
    let mut s1 = ParamStore::new();
    let m1 = LgCat::new(&mut Builder::new(&mut s1, &mut rng1), "lg", &one).unwrap();
    for (name, t) in s1.iter_mut() {
        *t = s2.get(name).unwrap().clone();
    }
    let tape = Tape::new();
    let run = |m: &LgCat, s: &ParamStore| {
        m.forward(&s.bind_frozen(&tape), tape.constant(x.clone()), tape.constant(y.clone())).unwrap().value()
    };
    assert!(run(&m1, &s1).max_abs_diff(&run(&m2, &s2)) > 1e-6);

    let names = m2.residual_outputs();
    s2.zero_where(|n| names.iter().any(|r| r == n));
    assert_eq!(*run(&m2, &s2), y);
}

#[test]
fn lg_cat_gradient_check_everything() {
    let c = cfg(2, 4, 2, 2, 2);
    let (m, store, mut rng) = build(10, |b| LgCat::new(b, "lg", &c).unwrap());
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut inputs = vec![uniform([1, 4, 4, 8], -1.0, 1.0, &mut rng), uniform([1, 4, 4, 8], -1.0, 1.0, &mut rng)];
    inputs.extend(names.iter().map(|n| store.get(n).unwrap().clone()));
    let report = grad_check(
        "lg_cat",
        &inputs,
        |tape, v| {
            let mut p = store.bind_frozen(tape);
            for (n, var) in names.iter().zip(&v[2..]) {
                p.replace(n, *var)?;
            }
            m.forward(&p, v[0], v[1])
        },
        &GradCheckOptions { max_coords_per_input: 64, ..Default::default() },
    );
    assert!(report.passed, "{report}");
}

#[test]
fn symbiotic_transformer_wiring() {
    let c = cfg(2, 8, 2, 2, 2);
    let (st, mut store, mut rng) = build(11, |b| SymbioticTransformer::new(b, "st", &c).unwrap());
    let (fd, fs) = (uniform([2, 8, 8, 16], -1.0, 1.0, &mut rng), uniform([2, 8, 8, 16], -1.0, 1.0, &mut rng));
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let (d, s) = st.forward(&p, tape.constant(fd.clone()), tape.constant(fs.clone())).unwrap();
    assert_eq!((d.shape(), s.shape()), (vec![2, 8, 8, 16], vec![2, 8, 8, 16]));

    // semantics output is exactly the depth-guided block applied to (F_d, F_s)
    let dgt = st.dgt.forward(&p, tape.constant(fd.clone()), tape.constant(fs.clone())).unwrap();
    let sgt = st.sgt.forward(&p, tape.constant(fs.clone()), tape.constant(fd.clone())).unwrap();
    assert_eq!(*s.value(), *dgt.value());
    assert_eq!(*d.value(), *sgt.value());

    // swapping inputs swaps which parameter set serves which stream
    let (d2, s2) = st.forward(&p, tape.constant(fs.clone()), tape.constant(fd.clone())).unwrap();
    assert_ne!(*d2.value(), *s.value());
    let swapped = st.dgt.forward(&p, tape.constant(fs.clone()), tape.constant(fd.clone())).unwrap();
    assert_eq!(*s2.value(), *swapped.value());

    let names = st.residual_outputs();
    store.zero_where(|n| names.iter().any(|r| r == n));
    let p = store.bind_frozen(&tape);
    let (d, s) = st.forward(&p, tape.constant(fd.clone()), tape.constant(fs.clone())).unwrap();
    assert_eq!((&*d.value(), &*s.value()), (&fd, &fs));
}

fn perturb_group(y: &Tensor, spec: PartitionSpec, group: (usize, usize), delta: f64) -> Tensor {
    let [_, hh, ww, _] = y.dims4("perturb").unwrap();
    let (sh, sw) = (hh / spec.h, ww / spec.w);
    let in_group = |i: usize, j: usize| match spec.kind {
        symdepth_core::partition::PartitionKind::Window => (i / spec.h, j / spec.w) == group,
        symdepth_core::partition::PartitionKind::Grid => (i % sh, j % sw) == group,
    };
    let mut out = y.clone();
    let c = y.shape()[3];
    for i in 0..hh {
        for j in 0..ww {
            if in_group(i, j) {
                out.data_mut()[(i * ww + j) * c] += delta;
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn partitioned_attention_is_local(seed in any::<u64>(), gi in 0usize..2, gj in 0usize..3, grid in any::<bool>()) {
        let c = cfg(2, 2, 2, 2, 1);
        let spec = if grid { c.grid_spec() } else { c.window_spec() };
        let (layer, mut store, mut rng) = build(seed, |b| PartitionedAttention::new(b, "pa", &c, spec, true).unwrap());
        zero_bias(&mut store);
        let (x, y) = (uniform([1, 4, 6, 4], -1.0, 1.0, &mut rng), uniform([1, 4, 6, 4], -1.0, 1.0, &mut rng));
        let y2 = perturb_group(&y, spec, (gi, gj), 0.5);
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let a = layer.forward(&p, tape.constant(x.clone()), tape.constant(y)).unwrap().value();
        let b = layer.forward(&p, tape.constant(x), tape.constant(y2)).unwrap().value();
        let marker = perturb_group(&Tensor::zeros([1, 4, 6, 1]), spec, (gi, gj), 1.0);
        let mut changed_inside = false;
        for (pos, &m) in marker.data().iter().enumerate() {
            let diff = (0..4).map(|ci| (a.data()[pos * 4 + ci] - b.data()[pos * 4 + ci]).abs()).fold(0.0, f64::max);
            if m == 0.0 {
                prop_assert_eq!(diff, 0.0);
            } else if diff > 0.0 {
                changed_inside = true;
            }
        }
        prop_assert!(changed_inside);
    }

    #[test]
    fn attention_rows_are_distributions_in_value_hull(seed in any::<u64>(), l in 1usize..7) {
        let c = cfg(1, 1, 1, 1, 1);
        let (ca, store, mut rng) = build(seed, |b| CrossAttention::new(b, "ca", &c, (1, l)).unwrap());
        let (q, kv) = (uniform([3, l, 1], -2.0, 2.0, &mut rng), uniform([3, l, 1], -2.0, 2.0, &mut rng));
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let tr = ca.trace(&p, tape.constant(q), tape.constant(kv.clone())).unwrap();
        let weights = tr.weights.value();
        for row in weights.data().chunks(l) {
            prop_assert!(row.iter().all(|&w| w >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
        let v = ca.wv.forward(&p, tape.constant(kv)).unwrap().value();
        let mixed = tr.mixed.value();
        for n in 0..3 {
            let vals = &v.data()[n * l..(n + 1) * l];
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for &m in &mixed.data()[n * l..(n + 1) * l] {
                prop_assert!(m >= lo - 1e-12 && m <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn key_permutation_leaves_output_unchanged(seed in any::<u64>(), perm in Just((0..6).collect::<Vec<usize>>()).prop_shuffle()) {
        let c = cfg(2, 2, 1, 1, 1);
        let (ca, mut store, mut rng) = build(seed, |b| CrossAttention::new(b, "ca", &c, (2, 3)).unwrap());
        zero_bias(&mut store);
        let (q, kv) = (uniform([2, 6, 4], -1.0, 1.0, &mut rng), uniform([2, 6, 4], -1.0, 1.0, &mut rng));
        let shuffled = Tensor::from_fn([2, 6, 4], |i| kv.at(&[i[0], perm[i[1]], i[2]]));
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let a = ca.forward(&p, tape.constant(q.clone()), tape.constant(kv)).unwrap().value();
        let b = ca.forward(&p, tape.constant(q), tape.constant(shuffled)).unwrap().value();
        prop_assert!(a.max_abs_diff(&b) < 1e-12);
    }
}
