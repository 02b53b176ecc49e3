//! Finite-difference check of every differentiable op, the attention
//! modules and the smallest toy model.

use std::io::Write;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symdepth_core::attention::{AttentionConfig, CrossAttention, FusedMbConv, LgCat, PartitionedAttention, SymbioticTransformer};
use symdepth_core::layers::{ConvNormAct, ConvSpec};
use symdepth_core::losses::{jaccard_loss, joint_loss, si_loss, LossConfig, Targets};
use symdepth_core::model::{Model, ModelConfig, Task};
use symdepth_core::params::{Bound, Builder, ParamStore};
use symdepth_core::partition::{grid_partition, window_partition, PartitionSpec};
use symdepth_core::tensor::init::uniform;
use symdepth_core::tensor::{gelu, gelu_grad, grad_check, GradCheckOptions, GradCheckReport, Padding, Tape, Tensor, Var};
use symdepth_core::Result;

use crate::CliError;

type CaseFn = Box<dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>>;

pub struct Case {
    pub name: String,
    pub inputs: Vec<Tensor>,
    pub f: CaseFn,
    /// Coordinates sampled per input; `None` uses the default.
    pub max_coords: Option<usize>,
}

impl Case {
    fn new(name: &str, inputs: Vec<Tensor>, f: CaseFn) -> Self {
        Self { name: name.to_string(), inputs, f, max_coords: None }
    }

    fn coords(mut self, n: usize) -> Self {
        self.max_coords = Some(n);
        self
    }

    pub fn run(&self, base: &GradCheckOptions) -> GradCheckReport {
        let opts = GradCheckOptions {
            max_coords_per_input: self.max_coords.unwrap_or(base.max_coords_per_input),
            ..base.clone()
        };
        grad_check(&self.name, &self.inputs, &self.f, &opts)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Replace the GELU case with one whose backward rule is off by 1%.
    pub inject_fault: bool,
}

/// Redraws every parameter uniformly in `±scale` so that module checks
/// exercise non-trivial magnitudes; LayerNorm gains are centred on 1.
fn randomize(store: &mut ParamStore, rng: &mut ChaCha8Rng, scale: f64) {
    for (name, t) in store.iter_mut() {
        let centre = if name.ends_with(".gamma") { 1.0 } else { 0.0 };
        t.data_mut().iter_mut().for_each(|v| *v = centre + rng.random_range(-scale..scale));
    }
}

/// Binds `store` as constants, then swaps in `vars` for `names`.
fn bind_with<'t>(store: &ParamStore, tape: &'t Tape, names: &[String], vars: &[Var<'t>]) -> Result<Bound<'t>> {
    let mut p = store.bind_frozen(tape);
    for (n, v) in names.iter().zip(vars) {
        p.replace(n, *v)?;
    }
    Ok(p)
}

fn params_of(store: &ParamStore, names: &[String]) -> Vec<Tensor> {
    names.iter().map(|n| store.get(n).expect("known parameter").clone()).collect()
}

/// Module case: inputs are `features` followed by the named parameters.
fn module_case<F>(name: &str, store: ParamStore, features: Vec<Tensor>, params: Vec<String>, forward: F) -> Case
where
    F: for<'t> Fn(&Bound<'t>, &[Var<'t>]) -> Result<Var<'t>> + 'static,
{
    let n_feat = features.len();
    let mut inputs = features;
    inputs.extend(params_of(&store, &params));
    let f: CaseFn = Box::new(move |tape, v| {
        let p = bind_with(&store, tape, &params, &v[n_feat..])?;
        forward(&p, &v[..n_feat])
    });
    Case::new(name, inputs, f)
}

/// Every check in the suite, in a fixed order.
pub fn cases(opts: SuiteOptions) -> Result<Vec<Case>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let r = &mut rng;
    let mut cases = vec![
        Case::new(
            "add_broadcast",
            vec![uniform([2, 3, 4], -1.0, 1.0, r), uniform([4], -1.0, 1.0, r)],
            Box::new(|_, v| v[0].add(v[1])),
        ),
        Case::new(
            "sub_broadcast",
            vec![uniform([2, 1, 4], -1.0, 1.0, r), uniform([3, 1], -1.0, 1.0, r)],
            Box::new(|_, v| v[0].sub(v[1])),
        ),
        Case::new(
            "mul_broadcast",
            vec![uniform([2, 3, 4], -1.0, 1.0, r), uniform([1, 3, 1], -1.0, 1.0, r)],
            Box::new(|_, v| v[0].mul(v[1])),
        ),
        Case::new(
            "div",
            vec![uniform([3, 4], -1.0, 1.0, r), uniform([3, 4], 0.5, 2.0, r)],
            Box::new(|_, v| v[0].div(v[1])),
        ),
        Case::new("exp", vec![uniform([3, 4], -2.0, 2.0, r)], Box::new(|_, v| v[0].exp())),
        Case::new("ln", vec![uniform([3, 4], 0.2, 3.0, r)], Box::new(|_, v| v[0].ln())),
        Case::new("sqrt", vec![uniform([3, 4], 0.2, 3.0, r)], Box::new(|_, v| v[0].sqrt())),
        Case::new("square_scale_shift", vec![uniform([3, 4], -2.0, 2.0, r)], Box::new(|_, v| v[0].square()?.scale(0.7)?.add_scalar(0.3))),
    ];
    if opts.inject_fault {
        cases.push(Case::new(
            "gelu",
            vec![uniform([3, 5], -3.0, 3.0, r)],
            Box::new(|_, v| v[0].map_with_grad("gelu_corrupted", gelu, |x| 1.01 * gelu_grad(x))),
        ));
    } else {
        cases.push(Case::new("gelu", vec![uniform([3, 5], -3.0, 3.0, r)], Box::new(|_, v| v[0].gelu())));
    }
    cases.extend([
        Case::new("sigmoid", vec![uniform([3, 5], -4.0, 4.0, r)], Box::new(|_, v| v[0].sigmoid())),
        Case::new("softmax_last", vec![uniform([2, 3, 5], -2.0, 2.0, r)], Box::new(|_, v| v[0].softmax(-1))),
        Case::new("softmax_axis1", vec![uniform([2, 3, 5], -2.0, 2.0, r)], Box::new(|_, v| v[0].softmax(1))),
        Case::new(
            "layer_norm",
            vec![uniform([2, 3, 6], -2.0, 2.0, r), uniform([6], 0.5, 1.5, r), uniform([6], -0.5, 0.5, r)],
            Box::new(|_, v| v[0].layer_norm(v[1], v[2], 1e-5)),
        ),
        Case::new(
            "matmul_batched",
            vec![uniform([2, 3, 4], -1.0, 1.0, r), uniform([2, 4, 5], -1.0, 1.0, r)],
            Box::new(|_, v| v[0].matmul(v[1])),
        ),
        Case::new(
            "matmul_shared_rhs",
            vec![uniform([2, 3, 4], -1.0, 1.0, r), uniform([4, 5], -1.0, 1.0, r)],
            Box::new(|_, v| v[0].matmul(v[1])),
        ),
        Case::new(
            "reshape_permute",
            vec![uniform([2, 3, 4], -1.0, 1.0, r)],
            Box::new(|_, v| v[0].reshape([6, 4])?.permute(&[1, 0])?.transpose_last()),
        ),
        Case::new("mean_axes", vec![uniform([2, 3, 4, 2], -1.0, 1.0, r)], Box::new(|_, v| v[0].mean_axes(&[1, 2]))),
        Case::new(
            "concat_last",
            vec![uniform([2, 3, 2], -1.0, 1.0, r), uniform([2, 3, 3], -1.0, 1.0, r)],
            Box::new(|_, v| Var::concat_last(&[v[0], v[1]])),
        ),
        Case::new(
            "index_select",
            vec![uniform([4, 3], -1.0, 1.0, r)],
            Box::new(|_, v| v[0].index_select(Rc::new(vec![2, 0, 2, 3, 1]))),
        ),
        Case::new("flip", vec![uniform([2, 3, 4], -1.0, 1.0, r)], Box::new(|_, v| v[0].flip(1))),
        Case::new(
            "conv2d_same",
            vec![uniform([2, 5, 6, 3], -1.0, 1.0, r), uniform([3, 3, 3, 4], -1.0, 1.0, r)],
            Box::new(|_, v| v[0].conv2d(v[1], 1, Padding::Same, 1)),
        ),
        Case::new(
            "conv2d_stride2",
            vec![uniform([1, 6, 7, 2], -1.0, 1.0, r), uniform([3, 3, 2, 3], -1.0, 1.0, r)],
            Box::new(|_, v| v[0].conv2d(v[1], 2, Padding::Same, 1)),
        ),
        Case::new(
            "conv2d_valid",
            vec![uniform([1, 5, 5, 2], -1.0, 1.0, r), uniform([3, 3, 2, 2], -1.0, 1.0, r)],
            Box::new(|_, v| v[0].conv2d(v[1], 1, Padding::Valid, 1)),
        ),
        Case::new(
            "conv2d_depthwise",
            vec![uniform([1, 4, 4, 4], -1.0, 1.0, r), uniform([3, 3, 1, 4], -1.0, 1.0, r)],
            Box::new(|_, v| v[0].conv2d(v[1], 1, Padding::Same, 4)),
        ),
        Case::new("upsample_x2", vec![uniform([1, 3, 4, 2], -1.0, 1.0, r)], Box::new(|_, v| v[0].upsample_bilinear(2))),
        Case::new("upsample_x4", vec![uniform([1, 2, 3, 2], -1.0, 1.0, r)], Box::new(|_, v| v[0].upsample_bilinear(4))),
        Case::new("window_partition", vec![uniform([1, 4, 6, 2], -1.0, 1.0, r)], Box::new(|_, v| window_partition(&v[0], 2, 3))),
        Case::new("grid_partition", vec![uniform([1, 4, 6, 2], -1.0, 1.0, r)], Box::new(|_, v| grid_partition(&v[0], 2, 3))),
    ]);

    // Losses.
    let gt = uniform([1, 4, 4, 1], 0.5, 5.0, r);
    let mask = Tensor::from_fn([1, 4, 4, 1], |i| if (i[1] + i[2]) % 5 == 0 { 0.0 } else { 1.0 });
    cases.push(Case::new(
        "si_loss",
        vec![uniform([1, 4, 4, 1], 0.5, 5.0, r)],
        Box::new(move |_, v| si_loss(v[0], &gt, &mask, &LossConfig::default())),
    ));
    let labels: Vec<usize> = (0..16).map(|_| r.random_range(0..3)).collect();
    let onehot = Tensor::from_fn([1, 4, 4, 3], |i| if labels[i[1] * 4 + i[2]] == i[3] { 1.0 } else { 0.0 });
    cases.push(Case::new(
        "jaccard_loss",
        vec![uniform([1, 4, 4, 3], -1.0, 1.0, r)],
        Box::new(move |_, v| jaccard_loss(v[0].softmax(-1)?, &onehot)),
    ));

    cases.extend(module_cases(r)?);
    cases.extend(model_cases(r)?);
    Ok(cases)
}

fn module_cases(r: &mut ChaCha8Rng) -> Result<Vec<Case>> {
    let cfg = AttentionConfig { heads: 2, head_dim: 2, window: (2, 2), grid: (2, 2), ns: 1 };
    let c = cfg.channels();
    let mut out = Vec::new();

    let mut store = ParamStore::new();
    let attn = CrossAttention::new(&mut Builder::new(&mut store, r), "xa", &cfg, (2, 2))?;
    randomize(&mut store, r, 0.5);
    let names = vec!["xa.wq.weight".to_string(), "xa.wo.weight".to_string(), "xa.rel_bias".to_string()];
    out.push(module_case(
        "cross_attention",
        store,
        vec![uniform([2, 4, c], -1.0, 1.0, r), uniform([2, 4, c], -1.0, 1.0, r)],
        names,
        move |p, v| attn.forward(p, v[0], v[1]),
    ));

    let mut store = ParamStore::new();
    let block = PartitionedAttention::new(&mut Builder::new(&mut store, r), "blk", &cfg, PartitionSpec::window(2, 2), true)?;
    randomize(&mut store, r, 0.5);
    out.push(module_case(
        "block_cross_attention",
        store,
        vec![uniform([1, 4, 4, c], -1.0, 1.0, r), uniform([1, 4, 4, c], -1.0, 1.0, r)],
        vec!["blk.norm_q.gamma".into(), "blk.attn.wk.weight".into()],
        move |p, v| block.forward(p, v[0], v[1]),
    ));

    let mut store = ParamStore::new();
    let grid = PartitionedAttention::new(&mut Builder::new(&mut store, r), "grd", &cfg, PartitionSpec::grid(2, 2), true)?;
    randomize(&mut store, r, 0.5);
    out.push(module_case(
        "grid_cross_attention",
        store,
        vec![uniform([1, 4, 4, c], -1.0, 1.0, r), uniform([1, 4, 4, c], -1.0, 1.0, r)],
        vec!["grd.norm_kv.beta".into(), "grd.attn.wv.weight".into()],
        move |p, v| grid.forward(p, v[0], v[1]),
    ));

    let mut store = ParamStore::new();
    let mb = FusedMbConv::new(&mut Builder::new(&mut store, r), "mb", c)?;
    randomize(&mut store, r, 0.5);
    out.push(module_case(
        "fused_mbconv",
        store,
        vec![uniform([1, 4, 4, c], -1.0, 1.0, r)],
        vec!["mb.dw.kernel".into(), "mb.se_reduce.weight".into(), "mb.pw.kernel".into()],
        move |p, v| mb.forward(p, v[0]),
    ));

    let lg_cfg = AttentionConfig { ns: 2, ..cfg };
    let mut store = ParamStore::new();
    let lg = LgCat::new(&mut Builder::new(&mut store, r), "lg", &lg_cfg)?;
    randomize(&mut store, r, 0.5);
    out.push(module_case(
        "lg_cat",
        store,
        vec![uniform([1, 4, 4, c], -1.0, 1.0, r), uniform([1, 4, 4, c], -1.0, 1.0, r)],
        vec!["lg.r0.block.attn.wq.weight".into(), "lg.r1.grid.attn.rel_bias".into(), "lg.mbconv.se_expand.bias".into()],
        move |p, v| lg.forward(p, v[0], v[1]),
    ));

    let mut store = ParamStore::new();
    let sym = SymbioticTransformer::new(&mut Builder::new(&mut store, r), "dss", &lg_cfg)?;
    randomize(&mut store, r, 0.5);
    out.push(module_case(
        "symbiotic_transformer",
        store,
        vec![uniform([1, 4, 4, c], -1.0, 1.0, r), uniform([1, 4, 4, c], -1.0, 1.0, r)],
        vec![],
        move |p, v| {
            let (d, s) = sym.forward(p, v[0], v[1])?;
            Var::concat_last(&[d, s])
        },
    ));

    let mut store = ParamStore::new();
    let cna = ConvNormAct::new(&mut Builder::new(&mut store, r), "cna", ConvSpec::new(3, 4, 3))?;
    randomize(&mut store, r, 0.5);
    out.push(module_case(
        "conv_norm_gelu",
        store,
        vec![uniform([1, 4, 4, 3], -1.0, 1.0, r)],
        vec!["cna.conv.kernel".into(), "cna.norm.gamma".into()],
        move |p, v| cna.forward(p, v[0]),
    ));
    Ok(out)
}

fn model_cases(r: &mut ChaCha8Rng) -> Result<Vec<Case>> {
    let cfg = ModelConfig::min_toy();
    let (model, mut store) = Model::new(cfg, r)?;
    randomize(&mut store, r, 0.25);
    let model = Rc::new(model);
    let mut out = Vec::new();

    let m = model.clone();
    out.push(module_case(
        "model_stem",
        store.clone(),
        vec![uniform([1, 8, 8, 3], 0.0, 1.0, r)],
        vec!["stem.0.conv.kernel".into()],
        move |p, v| m.stem_forward(p, v[0]),
    ));
    let m = model.clone();
    out.push(module_case(
        "model_decoder_step",
        store.clone(),
        vec![uniform([1, 2, 2, 8], -1.0, 1.0, r), uniform([1, 4, 4, 8], -1.0, 1.0, r)],
        vec!["decoder.3.conv.kernel".into()],
        move |p, v| m.decoder_step(0, p, v[0], v[1]),
    ));
    let m = model.clone();
    out.push(module_case(
        "model_neck",
        store.clone(),
        vec![uniform([1, 4, 4, 4], -1.0, 1.0, r)],
        vec!["neck.depth.1.conv.kernel".into()],
        move |p, v| m.neck_forward(Task::Depth, p, v[0]),
    ));
    let m = model.clone();
    out.push(module_case(
        "model_depth_head",
        store.clone(),
        vec![uniform([1, 2, 2, 8], -1.0, 1.0, r)],
        vec!["head.depth.kernel".into()],
        move |p, v| m.head_forward(Task::Depth, p, v[0]),
    ));
    let m = model.clone();
    out.push(module_case(
        "model_semantics_head",
        store.clone(),
        vec![uniform([1, 2, 2, 8], -1.0, 1.0, r)],
        vec!["head.semantics.bias".into()],
        move |p, v| m.head_forward(Task::Semantics, p, v[0]),
    ));

    let (h, w, classes) = (cfg.height, cfg.width, cfg.class_count);
    let image = uniform([1, h, w, 3], 0.0, 1.0, r);
    let m = model.clone();
    out.push(
        module_case(
            "model_forward",
            store.clone(),
            vec![image.clone()],
            vec!["stem.1.conv.kernel".into(), "encoder.3.block0.grid_attn.attn.wq.weight".into(), "dss.sgt.r0.block.attn.wk.weight".into()],
            move |p, v| {
                let o = m.forward(p, v[0])?;
                Var::concat_last(&[o.depth, o.semantics])
            },
        )
        .coords(150),
    );
    let targets = Targets {
        depth: uniform([1, h, w, 1], 1.0, 9.0, r),
        labels: Tensor::from_fn([1, h, w, 1], |i| ((i[1] / 8 + i[2] / 8) % classes) as f64),
    };
    let m = model;
    out.push(
        module_case(
            "model_total_loss",
            store,
            vec![image],
            vec!["encoder.0.down.kernel".into(), "dss.dgt.mbconv.pw.kernel".into(), "head.depth.bias".into()],
            move |p, v| {
                let o = m.forward(p, v[0])?;
                Ok(joint_loss(o.depth, o.semantics, &targets, &LossConfig::default())?.0)
            },
        )
        .coords(150),
    );
    Ok(out)
}

/// Runs the suite, printing one report per case and a summary. Returns the
/// reports; fails when any case fails.
pub fn run(opts: SuiteOptions, out: &mut dyn Write) -> std::result::Result<Vec<GradCheckReport>, CliError> {
    let base = GradCheckOptions { seed: opts.seed ^ 0x9e37_79b9_7f4a_7c15, ..Default::default() };
    let w = |e: std::io::Error| CliError::io("<stdout>", e);
    let mut reports = Vec::new();
    for case in cases(opts)? {
        let report = case.run(&base);
        writeln!(out, "{report}").map_err(w)?;
        reports.push(report);
    }
    let failed: Vec<&GradCheckReport> = reports.iter().filter(|r| !r.passed).collect();
    writeln!(out, "checked {} ops, {} failed", reports.len(), failed.len()).map_err(w)?;
    if let Some(worst) = failed.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err)) {
        return Err(CliError::Check(format!(
            "{} of {} gradient checks failed; worst offender {} (rel {:.3e})",
            failed.len(),
            reports.len(),
            worst.op_name,
            worst.max_rel_err
        )));
    }
    Ok(reports)
}
