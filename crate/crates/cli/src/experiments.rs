//! One function per experiment: compose the library calls, return checks, the
//! CSV series and a JSON payload.

use paralab::paralin::{paralinearize, remainder, smoothing_study, theorem_dimension, Nonlinearity, ParalinParams};
use paralab::paraproduct::{
    decompose_product, lebesgue_bound_probe, probe_pairs, rest, structural_identity, ParaproductConfig,
};
use paralab::propagate::{directional_regularity, manufacture, twisted_consistency, DirectionalOptions, Recipe};
use paralab::scene::{dyadic_radii, geometry_report, poincare_probes, Scene};
use paralab::sobolev::{
    higher_order_norm_probe, lacunary, probe_family, riesz_probe, seeded_mean_zero, sobolev_norm, SobolevParams,
};
use paralab::speccalc::{
    eigendecompose, kernel_bound_probe, make_quadrature_with, reconstruct, MultiplierFamily, QuadratureRule,
    SpectralData,
};
use serde_json::json;

use crate::config::{Experiment, ExperimentConfig};
use crate::error::CliError;
use crate::report::{num, opt, Check, Relation, Table};

pub struct Outcome {
    pub checks: Vec<Check>,
    pub table: Table,
    pub details: serde_json::Value,
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    scene: Scene,
    spec: SpectralData,
    fam: MultiplierFamily,
}

impl Ctx<'_> {
    fn s(&self) -> f64 {
        self.cfg.params.s.expect("filled by validate")
    }

    fn p(&self) -> f64 {
        self.cfg.params.p.expect("filled by validate")
    }

    fn samples(&self) -> usize {
        self.cfg.params.samples.expect("filled by validate")
    }

    fn paraproduct(&self) -> Result<ParaproductConfig, CliError> {
        Ok(ParaproductConfig::new(&self.spec, self.fam, self.cfg.quadrature.options())?)
    }

    fn pairs(&self) -> Result<Vec<(Vec<f64>, Vec<f64>)>, CliError> {
        let fs = seeded_mean_zero(&self.spec, self.cfg.seed, 2 * self.samples())?;
        Ok(fs.chunks(2).map(|c| (c[0].clone(), c[1].clone())).collect())
    }

    fn l2(&self, u: &[f64]) -> f64 {
        self.scene.inner(u, u).sqrt()
    }
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Smallest ratio of consecutive entries; above 1 iff the series strictly increases.
fn min_growth(series: &[f64]) -> f64 {
    series.windows(2).map(|w| w[1] / w[0]).fold(f64::INFINITY, f64::min)
}

/// Runs a validated config on its scene.
pub fn execute(cfg: &ExperimentConfig, scene: Scene) -> Result<Outcome, CliError> {
    let spec = eigendecompose(&scene)?;
    let ctx = Ctx { cfg, fam: cfg.family()?, scene, spec };
    match cfg.experiment {
        Experiment::Geometry => geometry(&ctx),
        Experiment::Reconstruct => reconstruction(&ctx),
        Experiment::Decompose => decompose(&ctx),
        Experiment::Sobolev => sobolev(&ctx),
        Experiment::Paralinearize => paralin(&ctx),
        Experiment::Smoothing => smoothing(&ctx),
        Experiment::Propagate => propagate(&ctx),
    }
}

fn geometry(ctx: &Ctx) -> Result<Outcome, CliError> {
    let (scene, spec) = (&ctx.scene, &ctx.spec);
    let radii = dyadic_radii(scene);
    let rep = geometry_report(scene, &radii, &poincare_probes(scene, spec, ctx.cfg.seed))?;
    let mut checks = Vec::new();
    for k in 0..scene.fields().len() {
        checks.push(Check::at_most(format!("skew_residual_X{}", k + 1), scene.skew_residual(k), 1e-10));
    }
    let lmax = spec.lambda_max().max(f64::MIN_POSITIVE);
    checks.push(Check::compare("lambda_min_relative", spec.eigenvalues()[0] / lmax, Relation::AtLeast, -1e-12));
    if scene.is_connected() {
        checks.push(Check::compare("kernel_dim", spec.kernel_dim() as f64, Relation::Equal, 1.0));
    } else {
        checks.push(Check::record("kernel_dim", spec.kernel_dim() as f64));
    }
    checks.push(match ctx.cfg.params.doubling_max {
        Some(c) => Check::at_most("doubling_constant", rep.doubling_constant, c),
        None => Check::record("doubling_constant", rep.doubling_constant),
    });
    checks.push(Check::record("d_hom", rep.d_hom));
    checks.push(Check::record("vol_lower_c", rep.vol_lower_c));
    checks.push(Check::record("poincare_constant", rep.poincare_constant));
    checks.push(Check::record("growth_exponent", rep.growth_exponent));

    let dimension = scene.nominal_dimension().unwrap_or(rep.d_hom);
    let ts: Vec<f64> = radii.iter().map(|r| r * r).collect();
    let delta = ctx.cfg.params.delta.expect("filled by validate");
    let kb = kernel_bound_probe(spec, scene, &ts, dimension, rep.growth_exponent, delta)?;
    let worst = kb.points.iter().map(|p| p.constant).fold(0.0, f64::max);
    checks.push(Check::record("heat_kernel_constant_max", worst));

    let mut table = Table::new(&["t", "kernel_constant"]);
    for p in &kb.points {
        table.push(vec![num(p.t), num(p.constant)]);
    }
    Ok(Outcome { checks, table, details: json!({ "geometry": rep, "kernel_bound": kb }) })
}

fn reconstruction(ctx: &Ctx) -> Result<Outcome, CliError> {
    let opts = ctx.cfg.quadrature.options();
    let unit = QuadratureRule::for_range(&ctx.fam, 1.0, 1.0, opts)?;
    let norm_err = (unit.identity_factor(&ctx.fam, 1.0) - 1.0).abs();
    let quad = make_quadrature_with(&ctx.spec, &ctx.fam, opts)?;
    let mut table = Table::new(&["sample", "relative_error"]);
    let mut worst: f64 = 0.0;
    for (i, f) in seeded_mean_zero(&ctx.spec, ctx.cfg.seed, ctx.samples())?.iter().enumerate() {
        let r = reconstruct(&ctx.spec, &ctx.fam, &quad, f)?;
        let rel = ctx.l2(&diff(&r, f)) / ctx.l2(f);
        worst = worst.max(rel);
        table.push(vec![i.to_string(), num(rel)]);
    }
    let checks = vec![
        Check::at_most("scalar_normalization_error", norm_err, 1e-8),
        Check::at_most("reconstruction_error_max", worst, 1e-6),
        Check::record("quadrature_identity_error_max", quad.worst_error()),
        Check::record("c0", ctx.fam.c0()),
    ];
    let details = json!({ "nodes": quad.len(), "t_min": quad.t_min(), "t_max": quad.t_max() });
    Ok(Outcome { checks, table, details })
}

fn decompose(ctx: &Ctx) -> Result<Outcome, CliError> {
    let cfg = ctx.paraproduct()?;
    let mut coarse_opts = ctx.cfg.quadrature.options();
    coarse_opts.nodes_per_decade = (coarse_opts.nodes_per_decade / 2).max(1);
    let coarse = ParaproductConfig::from_rule_unchecked(ctx.fam, make_quadrature_with(&ctx.spec, &ctx.fam, coarse_opts)?);
    let mut table = Table::new(&["pair", "residual", "scale", "relative_residual", "coarse_relative_residual"]);
    let (mut worst, mut growth, mut projected) = (0.0_f64, 0.0_f64, false);
    for (i, (f, g)) in ctx.pairs()?.iter().enumerate() {
        let d = decompose_product(&cfg, &ctx.spec, &ctx.scene, f, g)?;
        let dc = decompose_product(&coarse, &ctx.spec, &ctx.scene, f, g)?;
        worst = worst.max(d.residual / d.scale);
        growth = growth.max(d.residual / dc.residual);
        projected |= d.projected;
        table.push(vec![i.to_string(), num(d.residual), num(d.scale), num(d.residual / d.scale), num(dc.residual / dc.scale)]);
    }
    let mut checks = vec![
        Check::at_most("decomposition_residual_max", worst, 1e-5),
        Check::compare("refinement_residual_ratio_max", growth, Relation::Below, 1.0),
        Check::record("inputs_projected", f64::from(u8::from(projected))),
    ];
    if let Some(q) = ctx.cfg.params.q {
        let pairs = probe_pairs(&ctx.spec, ctx.s() + 0.5, ctx.cfg.seed, false);
        let b = lebesgue_bound_probe(&cfg, &ctx.spec, &ctx.scene, ctx.p(), q, &pairs)?;
        checks.push(Check::record("lebesgue_bound_constant", b.constant));
    }
    let details = json!({ "coarse_nodes_per_decade": coarse_opts.nodes_per_decade });
    Ok(Outcome { checks, table, details })
}

fn sobolev(ctx: &Ctx) -> Result<Outcome, CliError> {
    let (scene, spec) = (&ctx.scene, &ctx.spec);
    let (s, p) = (ctx.s(), ctx.p());
    let params = SobolevParams::new(s, p, ctx.cfg.params.rho.expect("filled by validate"))?;
    let family = probe_family(spec, s + 0.5, ctx.cfg.seed);
    let mut table = Table::new(&["index", "lp", "homog", "inhomog", "sfunc", "equivalence_ratio"]);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
    for (i, f) in family.functions.iter().enumerate() {
        let r = sobolev_norm(spec, scene, f, params)?;
        lo = lo.min(r.equivalence_ratio);
        hi = hi.max(r.equivalence_ratio);
        table.push(vec![i.to_string(), num(r.lp), num(r.homog), num(r.inhomog), opt(r.sfunc), num(r.equivalence_ratio)]);
    }
    let mut checks = Vec::new();
    for k in 0..scene.fields().len() {
        let v = riesz_probe(spec, scene, &[k], 2.0, &[])?;
        checks.push(Check::at_most(format!("riesz_l2_X{}", k + 1), v, 1.0 + 1e-10));
        if p != 2.0 {
            checks.push(Check::record(format!("riesz_lp_X{}", k + 1), riesz_probe(spec, scene, &[k], p, &family.functions)?));
        }
    }
    checks.push(Check::record("equivalence_ratio_min", lo));
    checks.push(Check::record("equivalence_ratio_max", hi));
    let ho = higher_order_norm_probe(spec, scene, 1, p, &family.functions)?;
    checks.push(Check::record("first_order_ratio_min", ho.min_ratio));
    checks.push(Check::record("first_order_ratio_max", ho.max_ratio));
    if let Some(beta) = ctx.cfg.params.beta {
        let cfg = ctx.paraproduct()?;
        let mut worst: f64 = 0.0;
        for (f, g) in ctx.pairs()? {
            let id = structural_identity(&cfg, spec, scene, beta, &f, &g)?;
            worst = worst.max(id.residual / id.scale);
        }
        checks.push(Check::at_most("structural_identity_max", worst, 1e-8));
    }
    let details = json!({ "family_size": family.functions.len(), "family_truncated": family.truncated });
    Ok(Outcome { checks, table, details })
}

fn paralin_params(ctx: &Ctx) -> Result<ParalinParams, CliError> {
    Ok(ParalinParams::for_scene(&ctx.scene, ctx.s(), ctx.p(), ctx.cfg.params.eps.expect("filled by validate"))?)
}

fn paralin(ctx: &Ctx) -> Result<Outcome, CliError> {
    let nl = ctx.cfg.nonlinearity()?;
    let params = paralin_params(ctx)?;
    let cfg = ctx.paraproduct()?;
    let depth = ctx.cfg.params.depth.expect("filled by validate");
    let (f, truncated) = lacunary(&ctx.spec, depth, params.s + params.eps);
    let (_, rep) = paralinearize(&cfg, &ctx.spec, &ctx.scene, &nl, &f, params)?;
    let mut checks = vec![
        Check::compare("lacunary_truncated", f64::from(u8::from(truncated)), Relation::Equal, 0.0),
        Check::at_most("term_consistency", rep.consistency_residual / rep.consistency_scale, 1e-4),
        Check::record("w_norm_at_sigma", rep.w_norms[0].inhomog),
        Check::record("w_norm_at_s", rep.w_norms[1].inhomog),
        Check::record("out_of_range", f64::from(u8::from(rep.out_of_range))),
    ];
    if nl == Nonlinearity::Square {
        let mut worst: f64 = 0.0;
        for (f, g) in ctx.pairs()? {
            for u in [f, g] {
                let w = remainder(&cfg, &ctx.spec, &ctx.scene, &nl, &u)?;
                let r = rest(&cfg, &ctx.spec, &ctx.scene, &u, &u)?;
                worst = worst.max(ctx.l2(&diff(&w, &r)) / ctx.l2(&r));
            }
        }
        checks.push(Check::at_most("quadratic_exactness_max", worst, 1e-6));
    }
    let mut table = Table::new(&["term", "lp", "homog", "inhomog", "sfunc"]);
    let names = ["w_sigma", "w_s", "I", "II", "III", "IV", "V"];
    for (name, r) in names.iter().zip(rep.w_norms.iter().chain(&rep.term_norms)) {
        table.push(vec![name.to_string(), num(r.lp), num(r.homog), num(r.inhomog), opt(r.sfunc)]);
    }
    Ok(Outcome { checks, table, details: serde_json::to_value(&rep).expect("report serializes") })
}

fn smoothing(ctx: &Ctx) -> Result<Outcome, CliError> {
    let nl = ctx.cfg.nonlinearity()?;
    let params = paralin_params(ctx)?;
    let cfg = ctx.paraproduct()?;
    let [lo, hi] = ctx.cfg.params.k_range.expect("filled by validate");
    let depths: Vec<usize> = (lo..=hi).collect();
    let st = smoothing_study(&cfg, &ctx.spec, &ctx.scene, &nl, params, &depths)?;
    let contrast: Vec<f64> = st.rows.iter().map(|r| r.contrast_ratio).collect();
    let truncated = st.rows.iter().filter(|r| r.truncated).count();
    let checks = vec![
        Check::at_most("ratio_spread", st.spread, 3.0),
        Check::compare("contrast_growth_min", min_growth(&contrast), Relation::Above, 1.0),
        Check::compare("truncated_depths", truncated as f64, Relation::Equal, 0.0),
        Check::record("sigma", st.sigma),
        Check::record("eps_zero", f64::from(u8::from(st.eps_flag))),
    ];
    let mut table = Table::new(&["depth", "truncated", "ratio", "contrast_ratio", "w_norm", "f_norm"]);
    for r in &st.rows {
        table.push(vec![
            r.depth.to_string(),
            r.truncated.to_string(),
            num(r.ratio),
            num(r.contrast_ratio),
            num(r.w_norm),
            num(r.f_norm),
        ]);
    }
    Ok(Outcome { checks, table, details: serde_json::to_value(&st).expect("study serializes") })
}

fn propagate(ctx: &Ctx) -> Result<Outcome, CliError> {
    let pr = &ctx.cfg.params;
    let (s, p) = (ctx.s(), ctx.p());
    let recipe = match pr.recipe.as_deref().expect("filled by validate") {
        "gradient_eq" => Recipe::GradientEq { s_target: pr.s_target.expect("filled by validate") },
        _ => Recipe::TransportEq { a: pr.a.expect("filled by validate") },
    };
    let prob = manufacture(&ctx.scene, recipe, s, p)?;
    let scale = 1.0 + ctx.l2(&prob.f);
    let mut checks = vec![Check::at_most("manufactured_residual", prob.residual / scale, 1e-8)];
    let opts = DirectionalOptions { refinements: pr.refinements.clone().expect("filled by validate"), ..Default::default() };
    let cfg = ctx.paraproduct()?;
    let d = theorem_dimension(&ctx.scene)?;
    let mut table = Table::new(&["rho", "n", "u_norm", "commutator_norm"]);
    let mut reports = Vec::new();
    for &rho in pr.rho_values.as_ref().expect("filled by validate") {
        let rep = directional_regularity(&prob, rho, &opts)?;
        let series: Vec<f64> = rep.refinement_series.iter().map(|q| q.u_norm).collect();
        let largest = series.iter().cloned().fold(0.0, f64::max);
        if rep.in_theorem && largest <= 1e-10 * scale {
            checks.push(Check::at_most(format!("u_norm_relative_max_rho_{rho}"), largest / scale, 1e-10));
        } else if rep.in_theorem {
            checks.push(Check::at_most(format!("u_norm_spread_rho_{rho}"), rep.spread, 3.0));
        } else if matches!(recipe, Recipe::GradientEq { .. }) {
            checks.push(Check::compare(format!("u_norm_growth_rho_{rho}"), min_growth(&series), Relation::Above, 1.0));
        } else {
            checks.push(Check::record(format!("u_norm_growth_rho_{rho}"), min_growth(&series)));
        }
        let tw = twisted_consistency(&cfg, &ctx.spec, &prob, rho, 1.5)?;
        checks.push(Check::record(format!("twisted_frozen_residual_rho_{rho}"), tw.frozen_residual / tw.frozen_scale));
        checks.push(Check::record(format!("twisted_minus_u_rho_{rho}"), tw.t_minus_u));
        for q in &rep.refinement_series {
            table.push(vec![num(rho), q.n.to_string(), num(q.u_norm), opt(q.commutator_norm)]);
        }
        reports.push(json!({ "directional": rep, "twisted": tw }));
    }
    let details = json!({ "recipe": recipe.name(), "dimension": d, "gap": s - d / p, "rho": reports });
    Ok(Outcome { checks, table, details })
}
