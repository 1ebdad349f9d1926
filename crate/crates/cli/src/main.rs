use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use ballistica::compare::{self, parse_method, CompareReport, RunConfig, StateSource};
use ballistica::contfree;
use ballistica::evolve::{self, CurveOptions};
use ballistica::floquet::{BandGrid, ThetaGrid};
use ballistica::limits;
use ballistica::trees::{self, AndersonConfig, GraphSpec, LambdaGrid, TreeModel};
use ballistica::{Complex64, Error, Lattice, StateVector};

#[derive(Parser, Debug)]
#[command(name = "ballistica", version, about = "Ballistic transport limits and simulations")]
struct Cli {
    /// JSON run configuration (used by `compare`, or on its own).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for CSV output; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Band energies and group velocities on a torus grid.
    Bands {
        #[command(flatten)]
        lat: LatticeArgs,
        #[arg(long, default_value_t = 16)]
        grid: usize,
    },
    /// Closed-form moment limit and limiting velocity atoms.
    Limit {
        #[command(flatten)]
        lat: LatticeArgs,
        #[command(flatten)]
        st: StateArgs,
        #[arg(long, default_value_t = 1)]
        m: u32,
        #[arg(long, default_value_t = 64)]
        grid: usize,
    },
    /// Moment ratio `||x^m psi_t||^2 / t^{2m}` along a list of times.
    Evolve {
        #[command(flatten)]
        lat: LatticeArgs,
        #[command(flatten)]
        st: StateArgs,
        #[arg(long, default_value_t = 1)]
        m: u32,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Empirical law of `X_t / t`.
    Dist {
        #[command(flatten)]
        lat: LatticeArgs,
        #[command(flatten)]
        st: StateArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Closed form against simulation; exit code 1 when out of tolerance.
    Compare {
        #[command(flatten)]
        lat: LatticeArgs,
        #[command(flatten)]
        st: StateArgs,
        #[arg(long, default_value_t = 1)]
        m: u32,
        #[arg(long, default_value_t = 64)]
        grid: usize,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 0.05)]
        tolerance: f64,
        /// Compare velocity distributions instead of moments.
        #[arg(long)]
        dist: bool,
    },
    /// Free Schrodinger evolution on R^d.
    Contfree {
        #[arg(long, default_value = "gaussian")]
        profile: String,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 10.0)]
        t: f64,
        #[arg(long, default_value_t = 1)]
        m: u32,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        /// Half width of the spatial box.
        #[arg(long, default_value_t = 64.0)]
        half_width: f64,
        #[arg(long, default_value_t = 2048)]
        points: usize,
    },
    /// Green functions on universal covering trees.
    Tree {
        #[command(subcommand)]
        op: TreeCommand,
    },
}

#[derive(Subcommand, Debug)]
enum TreeCommand {
    /// Edge ratios zeta and diagonal Green function at lambda + i eta.
    Green {
        #[command(flatten)]
        g: GraphArgs,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = 0.01)]
        eta: f64,
    },
    /// Averaged moment against the spectral lower bound.
    Bound {
        #[command(flatten)]
        g: GraphArgs,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        /// Number of energy cells.
        #[arg(long, default_value_t = 200)]
        grid: usize,
        #[arg(long, default_value_t = 0.01)]
        eta: f64,
        #[arg(long, default_value_t = 1e-6)]
        eta_small: f64,
        /// Energy window `a,b`; defaults to the spectral radius bound.
        #[arg(long, value_delimiter = ',', num_args = 2, allow_hyphen_values = true)]
        window: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1_000_000)]
        depth_cap: usize,
    },
    /// Random potential statistics.
    Anderson {
        #[command(flatten)]
        g: GraphArgs,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 15)]
        depth: usize,
        #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
        lambda: f64,
        #[arg(long, default_value_t = 0.01)]
        eta: f64,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        s: Vec<f64>,
    },
}

#[derive(Args, Debug)]
struct LatticeArgs {
    /// Preset name (z1, z2, z3, triangular, hexagonal, lieb) or lattice file.
    #[arg(long, default_value = "z1")]
    lattice: String,
}

#[derive(Args, Debug)]
struct StateArgs {
    /// State file, `delta:<vertex>` (1-based, cell 0) or `uniform:<n>` on Z^1.
    #[arg(long, default_value = "delta:1")]
    state: String,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long, value_delimiter = ',', default_value = "25,50,75,100")]
    times: Vec<f64>,
    #[arg(long, default_value_t = 1.5)]
    safety: f64,
    /// Fixed box radius in cells.
    #[arg(long)]
    radius: Option<i64>,
    /// auto, dense or chebyshev.
    #[arg(long, default_value = "auto")]
    method: String,
}

#[derive(Args, Debug)]
struct GraphArgs {
    /// Graph file, `regular:<q>`, `complete:<n>` or `bipartite:<a>,<b>`.
    #[arg(long, default_value = "regular:2")]
    graph: String,
}

impl StateArgs {
    fn source(&self) -> anyhow::Result<StateSource> {
        let s = self.state.as_str();
        if let Some(v) = s.strip_prefix("delta:") {
            return Ok(StateSource::Delta(v.parse().with_context(|| format!("bad vertex in {s:?}"))?));
        }
        if let Some(n) = s.strip_prefix("uniform:") {
            return Ok(StateSource::UniformZ1(n.parse().with_context(|| format!("bad size in {s:?}"))?));
        }
        Ok(StateSource::File(s.to_string()))
    }
}

impl GraphArgs {
    fn model(&self) -> anyhow::Result<TreeModel> {
        let s = self.graph.as_str();
        let num = |v: &str| v.parse::<usize>().with_context(|| format!("bad graph {s:?}"));
        let model = if let Some(q) = s.strip_prefix("regular:") {
            TreeModel::regular(num(q)?, 0.0)?
        } else if let Some(n) = s.strip_prefix("complete:") {
            TreeModel::from_graph(&GraphSpec::complete(num(n)?))?
        } else if let Some(ab) = s.strip_prefix("bipartite:") {
            let (a, b) = ab.split_once(',').ok_or_else(|| anyhow!("expected bipartite:<a>,<b>"))?;
            TreeModel::from_graph(&GraphSpec::complete_bipartite(num(a)?, num(b)?))?
        } else {
            let spec = GraphSpec::from_file(Path::new(s))?;
            TreeModel::from_graph(&spec)?
        };
        Ok(model)
    }
}

/// CSV text with a provenance comment line.
struct Table {
    name: &'static str,
    provenance: serde_json::Value,
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    fn new(name: &'static str, provenance: serde_json::Value, header: &[String]) -> anyhow::Result<Self> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header)?;
        Ok(Table { name, provenance, writer })
    }

    fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) -> anyhow::Result<()> {
        self.writer.write_record(fields)?;
        Ok(())
    }

    fn finish(self, out: Option<&Path>) -> anyhow::Result<()> {
        let body = self.writer.into_inner().map_err(|e| anyhow!("csv buffer: {e}"))?;
        let mut text = format!("# provenance: {}\n", self.provenance).into_bytes();
        text.extend(body);
        match out {
            Some(dir) => {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                let path = dir.join(format!("{}.csv", self.name));
                std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            }
            None => std::io::stdout().write_all(&text)?,
        }
        Ok(())
    }
}

fn f(x: f64) -> String {
    format!("{x:.12e}")
}

fn provenance(command: &str, params: serde_json::Value) -> serde_json::Value {
    json!({ "tool": "ballistica", "version": env!("CARGO_PKG_VERSION"), "command": command, "params": params })
}

fn axis_names(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("{prefix}_{i}")).collect()
}

fn load(lat: &LatticeArgs) -> anyhow::Result<Lattice> {
    compare::load_lattice(&lat.lattice).with_context(|| format!("lattice {:?}", lat.lattice))
}

fn load_psi(lattice: &Lattice, st: &StateArgs) -> anyhow::Result<StateVector> {
    compare::load_state(lattice, &st.source()?).with_context(|| format!("state {:?}", st.state))
}

fn band_grid(lattice: &Lattice, n: usize) -> anyhow::Result<BandGrid> {
    compare::check_grid(n, lattice.dim())?;
    Ok(BandGrid::compute(lattice, ThetaGrid::new(lattice.dim(), n)?)?)
}

fn curve_options(run: &RunArgs) -> anyhow::Result<CurveOptions> {
    Ok(CurveOptions { safety: run.safety, radius: run.radius, method: parse_method(&run.method)?, ..Default::default() })
}

fn cmd_bands(lat: &LatticeArgs, grid: usize, out: Option<&Path>) -> anyhow::Result<bool> {
    let lattice = load(lat)?;
    let bands = band_grid(&lattice, grid)?;
    let d = lattice.dim();
    let mut header = axis_names("theta", d);
    header.extend(["n".to_string(), "E_n".to_string()]);
    header.extend(axis_names("h", d));
    header.push("degenerate_flag".into());
    let prov = provenance("bands", json!({ "lattice": lattice.name(), "grid": grid }));
    let mut table = Table::new("bands", prov, &header)?;
    for p in &bands.points {
        for n in 0..p.energies.len() {
            let mut row: Vec<String> = p.theta.iter().map(|x| f(*x)).collect();
            row.push((n + 1).to_string());
            row.push(f(p.energies[n]));
            row.extend(p.velocities[n].iter().map(|x| f(*x)));
            row.push(u8::from(p.degenerate[n]).to_string());
            table.row(row)?;
        }
    }
    table.finish(out)?;
    Ok(true)
}

fn cmd_limit(lat: &LatticeArgs, st: &StateArgs, m: u32, grid: usize, out: Option<&Path>) -> anyhow::Result<bool> {
    let lattice = load(lat)?;
    let psi = load_psi(&lattice, st)?;
    let bands = band_grid(&lattice, grid)?;
    let value = limits::periodic_limit(&lattice, &bands, &psi, m)?;
    let exact = if compare::is_integer_lattice(&lattice) {
        Some(limits::zd_limit(&psi, lattice.dim(), m)?)
    } else {
        None
    };
    eprintln!("limit (grid {grid}): {value:.12e}");
    if let Some(x) = exact {
        eprintln!("limit (exact): {x:.12e}");
    }
    let dist = limits::limit_distribution(&lattice, &bands, &psi.normalized()?)?;
    let d = lattice.dim();
    let mut header = axis_names("v", d);
    header.push("weight".into());
    let prov = provenance(
        "limit",
        json!({ "lattice": lattice.name(), "state": st.state, "m": m, "grid": grid, "limit": value, "exact": exact }),
    );
    let mut table = Table::new("limit", prov, &header)?;
    for (v, w) in &dist.atoms {
        if *w > 0.0 {
            table.row(v.iter().map(|x| f(*x)).chain([f(*w)]))?;
        }
    }
    table.finish(out)?;
    Ok(true)
}

fn cmd_evolve(lat: &LatticeArgs, st: &StateArgs, m: u32, run: &RunArgs, out: Option<&Path>) -> anyhow::Result<bool> {
    let lattice = load(lat)?;
    let psi = load_psi(&lattice, st)?;
    if m < 1 || m > limits::MAX_MOMENT {
        bail!(Error::InvalidParameter(format!("m = {m} outside 1..={}", limits::MAX_MOMENT)));
    }
    let curve = evolve::ballistic_curve(&lattice, &psi, m, &run.times, &curve_options(run)?)?;
    let prov = provenance(
        "evolve",
        json!({ "lattice": lattice.name(), "state": st.state, "m": m, "safety": run.safety,
                "radius": run.radius, "method": run.method }),
    );
    let header: Vec<String> = ["t", "ratio", "boundary_mass", "flag"].map(String::from).to_vec();
    let mut table = Table::new("evolve", prov, &header)?;
    for p in &curve {
        table.row([f(p.t), f(p.ratio), f(p.boundary_mass), u8::from(p.flagged).to_string()])?;
    }
    table.finish(out)?;
    Ok(curve.iter().all(|p| !p.flagged))
}

fn cmd_dist(lat: &LatticeArgs, st: &StateArgs, run: &RunArgs, out: Option<&Path>) -> anyhow::Result<bool> {
    let lattice = load(lat)?;
    let psi = load_psi(&lattice, st)?.normalized()?;
    let opts = curve_options(run)?;
    let d = lattice.dim();
    let mut header = vec!["t".to_string()];
    header.extend(axis_names("v", d));
    header.push("weight".into());
    let prov = provenance("dist", json!({ "lattice": lattice.name(), "state": st.state, "safety": run.safety }));
    let mut table = Table::new("dist", prov, &header)?;
    let mut clean = true;
    for &t in &run.times {
        let ev = evolve::evolve_in_box(&lattice, &psi, t, &opts)?;
        let emp = ev.empirical(&vec![0.0; d])?;
        clean &= emp.leak < evolve::BOUNDARY_TOL;
        for (v, w) in &emp.atoms {
            table.row([f(t)].into_iter().chain(v.iter().map(|x| f(*x))).chain([f(*w)]))?;
        }
    }
    table.finish(out)?;
    Ok(clean)
}

fn report_table(report: &CompareReport, dist: bool, out: Option<&Path>) -> anyhow::Result<bool> {
    let prov = serde_json::to_value(report)?;
    let col = if dist { "cdf_distance" } else { "ratio" };
    let header = vec!["t".to_string(), col.to_string()];
    let mut table = Table::new("compare", prov, &header)?;
    for (t, r) in &report.series {
        table.row([f(*t), f(*r)])?;
    }
    table.finish(out)?;
    eprintln!(
        "closed form {:.9e}, final relative error {:.3e}, boundary mass {:.3e}: {}",
        report.closed_form,
        report.final_rel_err,
        report.provenance.boundary_mass,
        if report.pass { "PASS" } else { "FAIL" }
    );
    Ok(report.pass)
}

fn run_config(config: &RunConfig, out: Option<&Path>) -> anyhow::Result<bool> {
    match config.subcommand.as_str() {
        "compare" => report_table(&compare::run_compare(config)?, false, out),
        "dist" => report_table(&compare::run_dist_compare(config)?, true, out),
        other => bail!(Error::InvalidParameter(format!("config subcommand {other:?} is not compare or dist"))),
    }
}

fn cmd_contfree(c: &Command, out: Option<&Path>) -> anyhow::Result<bool> {
    let Command::Contfree { profile, sigma, t, m, dim, half_width, points } = c else { unreachable!() };
    if profile != "gaussian" {
        bail!(Error::InvalidParameter(format!("unknown profile {profile:?}")));
    }
    let psi = contfree::gaussian(*dim, *half_width, *points, *sigma)?;
    let limit = contfree::cont_free_limit(&psi, *m)?;
    let evolved = contfree::free_evolve(&psi, *t)?;
    let ratio = evolved.moment(*m) / t.powi(2 * *m as i32);
    let rel = (ratio - limit).abs() / limit;
    let prov = provenance(
        "contfree",
        json!({ "profile": profile, "sigma": sigma, "m": m, "dim": dim, "half_width": half_width, "points": points }),
    );
    let header: Vec<String> = ["t", "ratio", "limit", "rel_err"].map(String::from).to_vec();
    let mut table = Table::new("contfree", prov, &header)?;
    table.row([f(*t), f(ratio), f(limit), f(rel)])?;
    table.finish(out)?;
    Ok(true)
}

fn spectral_window(model: &TreeModel) -> (f64, f64) {
    let deg = (0..model.vertex_classes()).map(|v| model.out_edges(v).len()).max().unwrap_or(0) as f64;
    let w = model.potential().iter().fold(0.0f64, |a, x| a.max(x.abs()));
    (-(deg + w) - 0.1, deg + w + 0.1)
}

fn cmd_tree(op: &TreeCommand, out: Option<&Path>) -> anyhow::Result<bool> {
    match op {
        TreeCommand::Green { g, lambda, eta } => {
            let model = g.model()?;
            let cache = trees::zeta_fixed_point(&model, Complex64::new(*lambda, *eta))?;
            let prov = provenance(
                "tree green",
                json!({ "graph": g.graph, "lambda": lambda, "eta": eta, "residual": cache.residual,
                        "redu_residual": trees::redu_residual(&model, &cache),
                        "zetainv_residual": trees::zetainv_residual(&model, &cache) }),
            );
            let header: Vec<String> = ["kind", "from", "to", "re", "im"].map(String::from).to_vec();
            let mut table = Table::new("tree_green", prov, &header)?;
            for (e, (a, b)) in model.edge_classes().iter().enumerate() {
                let z = cache.zeta[e];
                table.row(["zeta".into(), a.to_string(), b.to_string(), f(z.re), f(z.im)])?;
            }
            for (v, gv) in cache.g_diag.iter().enumerate() {
                table.row(["g".into(), v.to_string(), v.to_string(), f(gv.re), f(gv.im)])?;
            }
            table.finish(out)?;
            Ok(true)
        }
        TreeCommand::Bound { g, beta, grid, eta, eta_small, window, depth_cap } => {
            let model = g.model()?;
            let (a, b) = match window {
                Some(w) => (w[0], w[1]),
                None => spectral_window(&model),
            };
            let lg = LambdaGrid::uniform(a, b, *grid)?;
            let avg = trees::averaged_moment(&model, *beta, *eta, &lg, *depth_cap)?;
            let lb = trees::pertree_lower_bound(&model, *beta, &lg, *eta_small)?;
            let prov = provenance(
                "tree bound",
                json!({ "graph": g.graph, "grid": grid, "window": [a, b], "eta_small": eta_small,
                        "bound_at_double_eta": lb.value_double, "bound_points": lb.points_used }),
            );
            let header: Vec<String> =
                ["beta", "eta", "scaled_moment", "lower_bound", "extrapolated_bound"].map(String::from).to_vec();
            let mut table = Table::new("tree_bound", prov, &header)?;
            table.row([f(*beta), f(*eta), f(avg), f(lb.value), f(lb.extrapolated)])?;
            table.finish(out)?;
            Ok(avg >= lb.value)
        }
        TreeCommand::Anderson { g, epsilon, samples, seed, depth, lambda, eta, s } => {
            let model = g.model()?;
            if *samples > compare::MAX_SAMPLES {
                bail!(Error::InvalidParameter(format!("samples above {}", compare::MAX_SAMPLES)));
            }
            let cfg = AndersonConfig { epsilon: *epsilon, depth: *depth, samples: *samples, seed: *seed };
            let st = trees::anderson_statistics(&model, &cfg, *lambda, *eta, s)?;
            let prov = provenance(
                "tree anderson",
                json!({ "graph": g.graph, "epsilon": epsilon, "samples": samples, "seed": seed, "depth": depth,
                        "herglotz_fraction": st.herglotz_fraction, "redu_residual": st.max_redu_residual,
                        "periodic_im_g": st.periodic_im_g }),
            );
            let header: Vec<String> =
                ["lambda", "eta", "mean_im_g", "se_im_g", "s", "inverse_moment", "se_inverse_moment", "heavy_tail"]
                    .map(String::from)
                    .to_vec();
            let mut table = Table::new("tree_anderson", prov, &header)?;
            for mo in &st.inverse_moments {
                table.row([
                    f(*lambda),
                    f(*eta),
                    f(st.mean_im_g),
                    f(st.std_error_im_g),
                    f(mo.s),
                    f(mo.mean),
                    f(mo.std_error),
                    u8::from(mo.heavy_tail).to_string(),
                ])?;
            }
            table.finish(out)?;
            Ok(st.herglotz_fraction == 1.0)
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<bool> {
    let out = cli.out.as_deref();
    let config = match &cli.config {
        Some(p) => Some(RunConfig::from_file(p)?),
        None => None,
    };
    let Some(command) = &cli.command else {
        return match config {
            Some(c) => run_config(&c, out),
            None => bail!(Error::InvalidParameter("no subcommand and no --config".into())),
        };
    };
    match command {
        Command::Bands { lat, grid } => cmd_bands(lat, *grid, out),
        Command::Limit { lat, st, m, grid } => cmd_limit(lat, st, *m, *grid, out),
        Command::Evolve { lat, st, m, run } => cmd_evolve(lat, st, *m, run, out),
        Command::Dist { lat, st, run } => cmd_dist(lat, st, run, out),
        Command::Compare { lat, st, m, grid, run, tolerance, dist } => {
            let config = match config {
                Some(c) => c,
                None => RunConfig {
                    subcommand: if *dist { "dist" } else { "compare" }.into(),
                    lattice: lat.lattice.clone(),
                    state: st.source()?,
                    m: *m,
                    times: run.times.clone(),
                    grid: *grid,
                    safety: run.safety,
                    radius: run.radius,
                    method: run.method.clone(),
                    tolerance: *tolerance,
                    out: cli.out.as_ref().map(|p| p.display().to_string()),
                    ..RunConfig::default()
                },
            };
            run_config(&config, out)
        }
        c @ Command::Contfree { .. } => cmd_contfree(c, out),
        Command::Tree { op } => cmd_tree(op, out),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(e) if e.is_numerical() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("BALLISTICA_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: thread pool: {e}");
        }
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
