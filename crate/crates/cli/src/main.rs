use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use warranty_core::cost::{quantile_table, REPORT_LEVELS};
use warranty_core::io::{
    load_claims, load_sales, load_table, synthetic_records, write_claims_csv, write_sales_csv, PlotData, RunConfig,
};
use warranty_core::pipeline::{
    anchor, claims_stage, cost_columns, period_limit, run_pipeline, sales_stage, stage_plots, tail_stage, Inputs,
};
use warranty_core::sim::monte_carlo_validate;
use warranty_core::Error;

/// Forecast the cost of warranty claims over a future window.
#[derive(Debug, Parser)]
#[command(name = "warranty", version)]
struct Cli {
    /// TOML run configuration; its keys override command-line flags.
    #[arg(long, global = true, env = "WARRANTY_CONFIG")]
    config: Option<PathBuf>,

    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,

    #[command(flatten)]
    run: RunFlags,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PolicyFlag {
    FreeReplacement,
    ProRata,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RebateFlag {
    Linear,
    Quadratic,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RegimeFlag {
    FiniteVariance,
    #[value(name = "stable-1-2")]
    Stable12,
    #[value(name = "stable-0-1")]
    Stable01,
    #[value(name = "stable-eq-1")]
    StableEq1,
}

/// Flags that mirror the run configuration.
#[derive(Debug, Args)]
struct RunFlags {
    /// Warranty length W in days.
    #[arg(long, global = true)]
    warranty: Option<u32>,
    /// Forecast period T in days.
    #[arg(long, global = true)]
    period: Option<u32>,
    /// Window offsets, comma separated (default: 0 and T).
    #[arg(long, global = true, value_delimiter = ',')]
    offsets: Option<Vec<u32>>,
    /// Explicit n; the observed sales total is used otherwise.
    #[arg(long, global = true)]
    n: Option<u64>,
    #[arg(long, global = true, value_enum)]
    policy: Option<PolicyFlag>,
    /// Rebate shape for pro-rata.
    #[arg(long, global = true, value_enum)]
    rebate: Option<RebateFlag>,
    /// Unit price c_b for pro-rata.
    #[arg(long = "c-b", global = true)]
    c_b: Option<f64>,
    /// Rebate value at age W for pro-rata.
    #[arg(long, global = true)]
    residual: Option<f64>,
    /// Upper order statistics in the QQ estimator.
    #[arg(long = "qq-k", global = true)]
    qq_k: Option<usize>,
    /// Moving-average half-width in days.
    #[arg(long = "ma-window", global = true)]
    ma_window: Option<usize>,
    #[arg(long = "poly-degree", global = true)]
    poly_degree: Option<usize>,
    /// Treat the sales residuals as stationary.
    #[arg(long, global = true)]
    stationary: bool,
    #[arg(long, global = true, value_enum)]
    regime: Option<RegimeFlag>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    reps: Option<usize>,
    /// Bin width in days for the Bass fit.
    #[arg(long = "bass-bin", global = true)]
    bass_bin: Option<usize>,
}

#[derive(Debug, Args)]
struct DataArgs {
    #[arg(long)]
    sales: PathBuf,
    #[arg(long)]
    claims: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the Bass curve and decompose the sales residuals.
    FitSales {
        #[arg(long)]
        sales: PathBuf,
        /// Directory for plot-data files.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate the mean claims measure.
    FitClaims {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tail index and regime of the claim sizes.
    DiagnoseTail {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Limit parameters c1, c2, mu, sigma2 per window.
    Estimate {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Quantiles of the approximate cost law per window.
    Quantiles {
        #[command(flatten)]
        data: DataArgs,
        /// Probability levels, comma separated.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<f64>>,
    },
    /// Write one synthetic replication of the configured model as CSV.
    Simulate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo check of the limit laws for the configured model.
    Validate,
    /// Full pipeline: text report, JSON report and plot data.
    Report {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

impl RunFlags {
    fn to_table(&self) -> Result<toml::Table> {
        let mut t = toml::Table::new();
        let mut put = |k: &str, v: toml::Value| {
            t.insert(k.to_string(), v);
        };
        if let Some(v) = self.warranty {
            put("warranty", i64::from(v).into());
        }
        if let Some(v) = self.period {
            put("period", i64::from(v).into());
        }
        if let Some(v) = &self.offsets {
            put(
                "offsets",
                toml::Value::Array(v.iter().map(|o| i64::from(*o).into()).collect()),
            );
        }
        if let Some(v) = self.n {
            let mut e = toml::Table::new();
            e.insert("explicit".into(), i64::try_from(v)?.into());
            put("n_policy", e.into());
        }
        match self.policy {
            Some(PolicyFlag::ProRata) => {
                let mut p = toml::Table::new();
                p.insert("type".into(), "pro_rata".into());
                let kind = match self.rebate.unwrap_or(RebateFlag::Linear) {
                    RebateFlag::Linear => "linear",
                    RebateFlag::Quadratic => "quadratic",
                };
                p.insert("kind".into(), kind.into());
                let Some(c_b) = self.c_b else {
                    bail!("--policy pro-rata needs --c-b")
                };
                p.insert("c_b".into(), c_b.into());
                p.insert("residual".into(), self.residual.unwrap_or(0.0).into());
                put("policy", p.into());
            }
            Some(PolicyFlag::FreeReplacement) => {
                let mut p = toml::Table::new();
                p.insert("type".into(), "free_replacement".into());
                put("policy", p.into());
            }
            None => {}
        }
        let usize_keys = [
            ("qq_k", self.qq_k),
            ("ma_window", self.ma_window),
            ("poly_degree", self.poly_degree),
            ("reps", self.reps),
            ("bass_bin", self.bass_bin),
        ];
        for (k, v) in usize_keys {
            if let Some(v) = v {
                put(k, i64::try_from(v)?.into());
            }
        }
        if self.stationary {
            put("stationary", true.into());
        }
        if let Some(r) = self.regime {
            let name = match r {
                RegimeFlag::FiniteVariance => "finite_variance",
                RegimeFlag::Stable12 => "stable_1_2",
                RegimeFlag::Stable01 => "stable_0_1",
                RegimeFlag::StableEq1 => "stable_eq_1",
            };
            put("regime_override", name.into());
        }
        if let Some(s) = self.seed {
            put("seed", i64::try_from(s)?.into());
        }
        Ok(t)
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut layers = vec![cli.run.to_table()?];
    if let Some(path) = &cli.config {
        layers.push(load_table(path)?);
    }
    Ok(RunConfig::from_layers(&layers)?)
}

fn load_inputs(sales: &Path, claims: Option<&Path>) -> Result<Inputs> {
    let s = load_sales(sales)?;
    let (claims, claims_format) = match claims {
        Some(p) => {
            let c = load_claims(p)?;
            (c.records, c.date_format)
        }
        None => (Vec::new(), None),
    };
    if let (Some(a), Some(b)) = (s.date_format, claims_format) {
        if a != b {
            return Err(Error::validation(format!("sales dates are {a:?} but claim dates are {b:?}")).into());
        }
    }
    Ok(Inputs {
        sales: s.records,
        claims,
        date_format: s.date_format,
    })
}

fn write_plots(dir: &Path, plots: &[PlotData]) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for p in plots {
        p.write_to(dir)?;
    }
    Ok(())
}

fn emit<T: Serialize>(json: bool, value: &T, text: impl FnOnce() -> String) -> Result<()> {
    if json {
        println!("{}", serde_json::to_string_pretty(value)?);
    } else {
        print!("{}", text());
    }
    Ok(())
}

#[derive(Serialize)]
struct LimitRow {
    start: i64,
    end: i64,
    limit: warranty_core::cost::LimitParams,
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::FitSales { sales, out } => {
            let data = anchor(&load_inputs(sales, None)?)?;
            let st = sales_stage(&cfg, &data.sales)?;
            if let Some(dir) = out {
                let plots: Vec<PlotData> = sales_plots(&st);
                write_plots(dir, &plots)?;
            }
            let p = &st.fit.params;
            #[derive(Serialize)]
            struct Out<'a> {
                bass: &'a warranty_core::sales::BassParams,
                iterations: usize,
                objective: f64,
                residual_mean: f64,
                residual_variance: f64,
                acf: &'a [f64],
            }
            let d = &st.decomposition;
            let o = Out {
                bass: p,
                iterations: st.fit.iterations,
                objective: st.fit.objective,
                residual_mean: d.l,
                residual_variance: d.s2,
                acf: &d.acf[..d.acf.len().min(11)],
            };
            emit(cli.json, &o, || {
                let mut s = format!(
                    "n {}\nB {:.6e}\nC {:.6e}\niterations {}\nobjective {:.6e}\nresidual mean {:.6}\nresidual variance {:.6}\nacf",
                    p.n, p.innovation, p.imitation, st.fit.iterations, st.fit.objective, d.l, d.s2
                );
                for a in o.acf {
                    s.push_str(&format!(" {a:.4}"));
                }
                s.push('\n');
                s
            })
        }
        Command::FitClaims { data, out } => {
            let d = anchor(&load_inputs(&data.sales, Some(&data.claims))?)?;
            let cs = claims_stage(&cfg, &d.sales, &d.claims)?;
            if let Some(dir) = out {
                let plots = stage_plots(&sales_stage(&cfg, &d.sales)?, &cs, None)?;
                let keep: Vec<PlotData> = plots.into_iter().filter(|p| p.name.starts_with("mhat")).collect();
                write_plots(dir, &keep)?;
            }
            let m = &cs.mhat;
            #[derive(Serialize)]
            struct Out {
                slope: f64,
                intercept: f64,
                atom_zero: f64,
                atom_warranty: f64,
                total_mass: f64,
                claims: usize,
                unknown_vehicle: usize,
            }
            let o = Out {
                slope: m.slope(),
                intercept: m.intercept(),
                atom_zero: m.atom_zero(),
                atom_warranty: m.atom_warranty(),
                total_mass: m.total_mass(),
                claims: cs.claims.len(),
                unknown_vehicle: cs.measures.rejects.len(),
            };
            emit(cli.json, &o, || {
                format!(
                    "density {:.6e} y + {:.6e}\natom 0 {:.4}\natom W {:.4}\ntotal mass {:.6}\nclaims {} (unknown vehicle {})\n",
                    o.slope, o.intercept, o.atom_zero, o.atom_warranty, o.total_mass, o.claims, o.unknown_vehicle
                )
            })
        }
        Command::DiagnoseTail { data, out } => {
            let d = anchor(&load_inputs(&data.sales, Some(&data.claims))?)?;
            let cs = claims_stage(&cfg, &d.sales, &d.claims)?;
            let sizes: Vec<f64> = cs.claims.iter().map(|c| c.amount).collect();
            let n = match cfg.n_policy {
                warranty_core::io::NPolicy::ObservedTotal => d.sales.len() as u64,
                warranty_core::io::NPolicy::Explicit(n) => n,
            };
            let t = tail_stage(&cfg, &sizes, n)?;
            if let Some(dir) = out {
                let qq = warranty_core::tail::qq_plot_data(&sizes, cfg.qq_k)?;
                write_plots(dir, &[PlotData::new("qq_points", "exp_quantile", "log_size", qq)])?;
            }
            emit(cli.json, &t, || {
                let s = &t.diagnosis.summary;
                let mut out = format!(
                    "alpha {:.4} (k = {})\nregime {}\nmean {:.4}\nvariance {:.4}\nquartiles {:.4} {:.4} {:.4}\n",
                    t.diagnosis.alpha_hat,
                    t.diagnosis.k,
                    t.regime.name(),
                    s.mean,
                    s.variance,
                    s.q25,
                    s.q50,
                    s.q75
                );
                if let Some(sc) = t.scalers {
                    out.push_str(&format!("b(n) {:.6e}\n", sc.b));
                    if let Some(e) = sc.e {
                        out.push_str(&format!("e(n) {e:.6e}\n"));
                    }
                }
                out
            })
        }
        Command::Estimate { data } => {
            let d = anchor(&load_inputs(&data.sales, Some(&data.claims))?)?;
            let cs = claims_stage(&cfg, &d.sales, &d.claims)?;
            let ss = sales_stage(&cfg, &d.sales)?;
            let rebate = cfg.rebate()?;
            let mut rows = Vec::new();
            for off in cfg.offsets() {
                let h = cfg.horizon(off, ss.n)?;
                let (limit, _) = period_limit(&cfg, &ss, &cs, &rebate, &h)?;
                let (start, end) = h.window();
                rows.push(LimitRow { start, end, limit });
            }
            emit(cli.json, &rows, || {
                let mut s = format!("{:<14}{:>12}{:>12}{:>12}{:>12}\n", "window", "c1", "c2", "mu", "sigma2");
                for r in &rows {
                    let l = &r.limit;
                    s.push_str(&format!(
                        "{:<14}{:>12.4}{:>12.4}{:>12.4}{:>12.4}\n",
                        format!("[{}, {}]", r.start, r.end),
                        l.c1,
                        l.c2,
                        l.mu_tilde,
                        l.sigma2_tilde
                    ));
                }
                s
            })
        }
        Command::Quantiles { data, levels } => {
            let levels = levels.clone().unwrap_or_else(|| REPORT_LEVELS.to_vec());
            let d = anchor(&load_inputs(&data.sales, Some(&data.claims))?)?;
            let cs = claims_stage(&cfg, &d.sales, &d.claims)?;
            let ss = sales_stage(&cfg, &d.sales)?;
            let rebate = cfg.rebate()?;
            let tail = if rebate.is_free_replacement() {
                let sizes: Vec<f64> = cs.claims.iter().map(|c| c.amount).collect();
                Some(tail_stage(&cfg, &sizes, ss.n)?)
            } else {
                None
            };
            #[derive(Serialize)]
            struct Col {
                window: (i64, i64),
                name: String,
                quantiles: Vec<(f64, f64)>,
            }
            let mut cols = Vec::new();
            for off in cfg.offsets() {
                let h = cfg.horizon(off, ss.n)?;
                let (lp, _) = period_limit(&cfg, &ss, &cs, &rebate, &h)?;
                for (name, law) in cost_columns(&lp, &rebate, tail.as_ref())? {
                    cols.push(Col {
                        window: h.window(),
                        name,
                        quantiles: quantile_table(&law, &levels)?,
                    });
                }
            }
            emit(cli.json, &cols, || {
                let mut s = format!("{:<8}", "p");
                for c in &cols {
                    s.push_str(&format!(
                        "{:>22}",
                        format!("[{},{}] {}", c.window.0, c.window.1, c.name)
                    ));
                }
                s.push('\n');
                for (i, p) in levels.iter().enumerate() {
                    s.push_str(&format!("{p:<8}"));
                    for c in &cols {
                        s.push_str(&format!("{:>22.2}", c.quantiles[i].1));
                    }
                    s.push('\n');
                }
                s
            })
        }
        Command::Simulate { out } => {
            let mc = cfg.mc_config()?;
            let (sales, claims) = synthetic_records(&mc, cfg.seed)?;
            std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
            let sp = out.join("sales.csv");
            let cp = out.join("claims.csv");
            write_sales_csv(File::create(&sp).with_context(|| sp.display().to_string())?, &sales)?;
            write_claims_csv(File::create(&cp).with_context(|| cp.display().to_string())?, &claims)?;
            #[derive(Serialize)]
            struct Out {
                sales: usize,
                claims: usize,
                seed: u64,
            }
            let o = Out {
                sales: sales.len(),
                claims: claims.len(),
                seed: cfg.seed,
            };
            emit(cli.json, &o, || {
                format!(
                    "wrote {} sales and {} claims (seed {}) to {}\n",
                    o.sales,
                    o.claims,
                    o.seed,
                    out.display()
                )
            })
        }
        Command::Validate => {
            let mc = cfg.mc_config()?;
            let r = monte_carlo_validate(&mc, cfg.reps, cfg.seed)?;
            emit(cli.json, &r, || {
                let mut s = format!(
                    "reps {} seed {}\nc1 {:.6} c2 {:.6} mu {:.6} sigma2 {:.6}\nmean count {:.3}\nmean cost {:.3}\n",
                    r.reps,
                    r.seed,
                    r.theory.c1,
                    r.theory.c2,
                    r.theory.mu_tilde,
                    r.theory.sigma2_tilde,
                    r.mean_count,
                    r.mean_cost
                );
                if r.degenerate {
                    s.push_str("no claims in any replication\n");
                    return s;
                }
                let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
                s.push_str(&format!("KS count {}\nKS cost {}\n", fmt(r.ks_count), fmt(r.ks_cost)));
                for q in &r.quantile_errors {
                    s.push_str(&format!(
                        "p {:<5} empirical {:>12.3} limit {:>12.3} rel err {:.4}\n",
                        q.p, q.empirical, q.theoretical, q.relative_error
                    ));
                }
                for c in &r.coverage {
                    s.push_str(&format!("coverage {:.2}: {:.4}\n", c.nominal, c.observed));
                }
                s
            })
        }
        Command::Report { data, out } => {
            let inputs = load_inputs(&data.sales, Some(&data.claims))?;
            let o = run_pipeline(&cfg, &inputs)?;
            std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
            let text = o.report.to_text();
            let json = o.report.to_json();
            std::fs::write(out.join("report.txt"), &text).context("writing report.txt")?;
            std::fs::write(out.join("report.json"), &json).context("writing report.json")?;
            write_plots(&out.join("plots"), &o.plots)?;
            if cli.json {
                println!("{json}");
            } else {
                print!("{text}");
            }
            Ok(())
        }
    }
}

fn sales_plots(st: &warranty_core::pipeline::SalesStage) -> Vec<PlotData> {
    let day = |i: usize| (st.first_day + i as i64) as f64;
    let p = &st.fit.params;
    let nf = st.n as f64;
    vec![
        PlotData::new(
            "residuals",
            "day",
            "residual",
            st.decomposition
                .r
                .iter()
                .enumerate()
                .map(|(i, r)| (day(i), *r))
                .collect(),
        ),
        PlotData::new(
            "sales_fit",
            "day",
            "fitted",
            (0..st.counts.len())
                .map(|i| (day(i), nf * (p.nu(day(i)) - p.nu(day(i) - 1.0))))
                .collect(),
        ),
    ]
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<Error>())
        .map_or(2, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
