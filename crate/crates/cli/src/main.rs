mod config;
mod plot;

use std::fmt::Display;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use config::RunConfig;
use hbargeo::acceptance;
use hbargeo::cell_pde::{default_eps_flat, sweep_hbar_grid, validate_global_properties, SolverParams};
use hbargeo::geometry::{detect_flat_edges, polygon_svg, refine_f0, vertex_unimodular_check, ConvexPolygon};
use hbargeo::metric::support_value;
use hbargeo::orbits::{
    decay_check, dominance_constant, lyapunov_perron_orbit, shoot_homoclinic, tail_segment, LPProblem, Orbit,
    ShootOptions,
};

/// Error carried to the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn input(message: impl Display) -> Self {
        Self {
            code: 1,
            message: message.to_string(),
        }
    }

    fn compute(message: impl Display) -> Self {
        Self {
            code: 2,
            message: message.to_string(),
        }
    }
}

impl From<hbargeo::Error> for Failure {
    fn from(e: hbargeo::Error) -> Self {
        use hbargeo::Error as E;
        match e {
            E::Io(_) | E::Json(_) | E::InvalidInput(_) | E::BadLevel(_) => Failure::input(e),
            _ => Failure::compute(e),
        }
    }
}

#[derive(Parser)]
#[command(name = "hbargeo", version, about = "Effective Hamiltonians of planar mechanical systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed for randomized sampling; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep the cell problem over a box of momenta.
    Hbar(Common),
    /// Build and refine the polygonal model of the minimal level set.
    F0(Common),
    /// Shoot homoclinic orbits for the configured homology classes.
    Homoclinic(Common),
    /// Run the Lyapunov-Perron iteration on the quadratic example.
    LpDemo(Common),
    /// Run an acceptance suite.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Suite name; overrides the config.
        #[arg(long)]
        suite: Option<String>,
    },
}

/// Files written by one command, plus the manifest describing them.
struct Output {
    dir: PathBuf,
    hash: String,
    files: Vec<String>,
}

impl Output {
    fn new(cfg: &RunConfig) -> Result<Self, Failure> {
        std::fs::create_dir_all(&cfg.out)
            .map_err(|e| Failure::input(format!("cannot create {}: {e}", cfg.out.display())))?;
        Ok(Self {
            dir: cfg.out.clone(),
            hash: cfg.hash(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Failure> {
        let mut v = serde_json::to_value(value).map_err(Failure::input)?;
        if let Some(obj) = v.as_object_mut() {
            obj.insert("config_hash".into(), json!(self.hash));
        }
        let mut text = serde_json::to_string_pretty(&v).map_err(Failure::input)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// CSV with a leading `#` comment carrying the config hash.
    fn csv(&mut self, name: &str, body: &[u8]) -> Result<(), Failure> {
        let mut bytes = format!("# config_hash={}\n", self.hash).into_bytes();
        bytes.extend_from_slice(body);
        self.write(name, &bytes)
    }

    fn svg(&mut self, name: &str, svg: &str) -> Result<(), Failure> {
        let tagged = svg.replacen("?>\n", &format!("?>\n<!-- config_hash={} -->\n", self.hash), 1);
        self.write(name, tagged.as_bytes())
    }

    fn finish(mut self, cfg: &RunConfig, failure: Option<&Failure>) -> Result<(), Failure> {
        let manifest = json!({
            "command": cfg.command,
            "seed": cfg.seed,
            "status": if failure.is_some() { "partial" } else { "complete" },
            "error": failure.map(|f| f.message.clone()),
            "files": self.files.clone(),
        });
        self.json("manifest.json", &manifest)
    }
}

fn orbit_csv(orbit: &Orbit) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    orbit.write_csv(&mut buf)?;
    Ok(buf)
}

fn cmd_hbar(cfg: &RunConfig, out: &mut Output) -> Result<Option<Failure>, Failure> {
    let h = &cfg.hbar;
    let mut params = SolverParams::new(h.grid_n, h.tol);
    if let Some(m) = h.max_steps {
        params.max_steps = m;
    }
    let grid = sweep_hbar_grid(&cfg.potential, h.p_max, h.p_step, &params)?;
    let eps = h.eps_flat.unwrap_or_else(|| default_eps_flat(h.grid_n));
    let report = validate_global_properties(&grid, eps);
    let missing: Vec<[f64; 2]> = grid.missing().into_iter().map(|k| grid.node(k)).collect();
    let mut csv = Vec::new();
    grid.write_csv(&mut csv)?;
    out.csv("hbar.csv", &csv)?;
    out.json(
        "hbar.json",
        &json!({
            "seed": cfg.seed,
            "potential": cfg.potential,
            "solver": params,
            "p_min": grid.p_min,
            "p_max": grid.p_max,
            "p_step": grid.p_step,
            "count": grid.count,
            "potential_min": grid.potential_min,
            "potential_max": grid.potential_max,
            "eps_flat": eps,
            "report": report,
            "missing": missing,
        }),
    )?;
    let caption = format!("flat set H <= {eps:.1e}; config {}", &out.hash[..12]);
    out.svg("hbar.svg", &plot::contour_svg(&grid, eps, 8, &caption))?;
    Ok((!missing.is_empty()).then(|| {
        Failure::compute(format!("cell solver did not converge at {} of {} nodes", missing.len(), grid.len()))
    }))
}

fn cmd_f0(cfg: &RunConfig, out: &mut Output) -> Result<Option<Failure>, Failure> {
    let f = &cfg.f0;
    let stages = refine_f0(&cfg.potential, &f.windows, &f.resolutions)?;
    let polys: Vec<ConvexPolygon> = stages.iter().map(|s| s.polygon.clone()).collect();
    let edges = detect_flat_edges(&polys, f.eps_edge);
    let last = polys.last().expect("at least one stage");
    let n = last.len();
    let stable = |k: usize| edges.iter().any(|e| e.index == k && e.stable);
    let mut checks = Vec::new();
    for k in 0..n {
        if stable(k) && stable((k + n - 1) % n) {
            checks.push(vertex_unimodular_check(last, last.vertices[k], f.eps_edge)?);
        }
    }
    let summary: Vec<_> = stages
        .iter()
        .map(|s| {
            json!({
                "window": s.window,
                "resolution": s.resolution,
                "area": s.polygon.area(),
                "diameter": s.polygon.diameter(),
                "symmetry_defect": s.polygon.symmetry_defect(),
                "polygon": s.polygon,
            })
        })
        .collect();
    out.json(
        "f0.json",
        &json!({
            "seed": cfg.seed,
            "potential": cfg.potential,
            "eps_edge": f.eps_edge,
            "stages": summary,
            "support_table": stages.last().map(|s| &s.table),
            "edges": edges,
            "vertex_checks": checks,
        }),
    )?;
    let stable_count = edges.iter().filter(|e| e.stable).count();
    let caption = format!(
        "{stable_count} stable edges, {} checked vertices; config {}",
        checks.len(),
        &out.hash[..12]
    );
    out.svg("f0.svg", &polygon_svg(last, &edges, &checks, &caption))?;
    Ok(None)
}

fn cmd_homoclinic(cfg: &RunConfig, out: &mut Output) -> Result<Option<Failure>, Failure> {
    let h = &cfg.homoclinic;
    let opts = ShootOptions {
        dt: h.dt,
        scan: h.scan,
        ..ShootOptions::default()
    };
    let mut records = Vec::new();
    let mut failed = Vec::new();
    for &w in &h.classes {
        let rec = match shoot_homoclinic(&cfg.potential, w, h.r0, opts) {
            Ok(r) => r,
            Err(e) => {
                failed.push(json!({ "homology": w, "error": e.to_string() }));
                continue;
            }
        };
        let support = if h.support_resolution > 0 {
            let window = w[0].unsigned_abs().max(w[1].unsigned_abs()) as usize + 1;
            Some(support_value(&cfg.potential, w, h.support_resolution, window)?)
        } else {
            None
        };
        let target = [w[0] as f64, w[1] as f64];
        let decay: Vec<_> = [([0.0, 0.0], false), (target, true)]
            .into_iter()
            .map(|(anchor, forward)| {
                let tail = tail_segment(&rec.orbit, anchor, 0.1, forward);
                let c = dominance_constant(&cfg.potential, &tail);
                decay_check(&cfg.potential, &tail, c, anchor)
            })
            .collect();
        out.csv(&format!("homoclinic_{}_{}.csv", w[0], w[1]), &orbit_csv(&rec.orbit)?)?;
        records.push(json!({
            "record": rec,
            "support_value": support,
            "max_energy_drift": rec.orbit.max_energy_drift(),
            "decay": decay,
        }));
    }
    out.json(
        "homoclinic.json",
        &json!({ "seed": cfg.seed, "potential": cfg.potential, "records": records, "failed": failed }),
    )?;
    Ok((!failed.is_empty()).then(|| Failure::compute(format!("{} classes without a connection", failed.len()))))
}

fn cmd_lp(cfg: &RunConfig, out: &mut Output) -> Result<Option<Failure>, Failure> {
    let l = &cfg.lp;
    let prob = LPProblem::quadratic_example(l.a, l.b, l.alpha, l.theta);
    let (orbit, report) = lyapunov_perron_orbit(&prob)?;
    // Exact solution of the example: (−αθ²/(2b − a) e^{−2bt}, θ e^{−bt}).
    let k = -l.alpha * l.theta * l.theta / (2.0 * l.b - l.a);
    let err = orbit
        .times
        .iter()
        .zip(&orbit.positions)
        .map(|(t, x)| (x[0] - k * (-2.0 * l.b * t).exp()).abs().max((x[1] - l.theta * (-l.b * t).exp()).abs()))
        .fold(0.0, f64::max);
    out.csv("lp_orbit.csv", &orbit_csv(&orbit)?)?;
    out.json(
        "lp.json",
        &json!({ "seed": cfg.seed, "problem": prob, "report": report, "sup_error_vs_exact": err }),
    )?;
    Ok(None)
}

fn cmd_verify(cfg: &RunConfig, suite_name: &str, out: &mut Output) -> Result<u8, Failure> {
    let ids = acceptance::suite(suite_name).unwrap_or(&[]);
    let mut done = Vec::new();
    for &id in ids {
        let o = acceptance::run_with_history(id, cfg.seed, &done);
        println!("criterion {:>2} {:<32} {}", o.id, o.name, if o.passed { "PASS" } else { "FAIL" });
        eprintln!("  {:.1}s {}", o.seconds, o.detail);
        for (label, secs) in &o.timings {
            eprintln!("  {label}: {secs:.3}s");
        }
        done.push(o);
    }
    let failures = done.iter().filter(|o| !o.passed).count();
    out.json(
        "verify_report.json",
        &json!({ "suite": suite_name, "seed": cfg.seed, "criteria": done, "failures": failures }),
    )?;
    println!("{failures} of {} criteria failed", done.len());
    Ok(failures.min(125) as u8)
}

fn init_threads() -> Result<(), Failure> {
    if let Ok(v) = std::env::var("HBARGEO_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Failure::input(format!("HBARGEO_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(Failure::input)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<u8, Failure> {
    init_threads()?;
    let (name, common, suite) = match &cli.command {
        Command::Hbar(c) => ("hbar", c, None),
        Command::F0(c) => ("f0", c, None),
        Command::Homoclinic(c) => ("homoclinic", c, None),
        Command::LpDemo(c) => ("lp-demo", c, None),
        Command::Verify { common, suite } => ("verify", common, suite.clone()),
    };
    let mut cfg = RunConfig::load(name, common.config.as_deref(), common.out.clone(), common.seed)?;
    if let Some(s) = suite {
        cfg.verify.suite = s;
    }
    if name == "verify" && acceptance::suite(&cfg.verify.suite).is_none() {
        let names: Vec<&str> = acceptance::SUITES.iter().map(|s| s.0).collect();
        return Err(Failure::input(format!(
            "unknown suite {:?}; available suites: {}",
            cfg.verify.suite,
            names.join(", ")
        )));
    }
    let mut out = Output::new(&cfg)?;
    let result = match name {
        "hbar" => cmd_hbar(&cfg, &mut out),
        "f0" => cmd_f0(&cfg, &mut out),
        "homoclinic" => cmd_homoclinic(&cfg, &mut out),
        "lp-demo" => cmd_lp(&cfg, &mut out),
        _ => {
            let suite = cfg.verify.suite.clone();
            let code = cmd_verify(&cfg, &suite, &mut out);
            out.finish(&cfg, None)?;
            return code;
        }
    };
    match result {
        Ok(partial) => {
            out.finish(&cfg, partial.as_ref())?;
            match partial {
                Some(f) => Err(f),
                None => Ok(0),
            }
        }
        Err(f) => {
            out.finish(&cfg, Some(&f))?;
            Err(f)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("hbargeo: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
