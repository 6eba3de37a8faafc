use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use fanopt_core::backtest::{sweep_n_opt, BacktestOptions, BacktestReport, CostSource, MeanReversionConfig};
use fanopt_core::density::{volatility_densities, DensityEstimate};
use fanopt_core::long_only::{fano_long_only, general_long_only, sharpe_long_only};
use fanopt_core::market_data::{moving_average_returns, rolling_volatility, write_matrix_csv, write_panel_csv, ReturnsPanel};
use fanopt_core::ratio::{evaluate_portfolio, maximize_fano, maximize_general, maximize_sharpe, PortfolioMetrics, RatioSpec};
use fanopt_core::risk::{
    build_statistical_model_from_returns, read_risk_model, write_risk_model, DenseCovariance, RiskModel, RiskModelKind,
    StatisticalModel, StatisticalOptions,
};
use fanopt_core::Error;
use log::info;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::Provenance;
use crate::data::{load, read_csv};
use crate::error::CliError;
use crate::{BacktestArgs, DataArgs, DensityArgs, OptimizeArgs, RatioKind, RiskmodelArgs, SynthArgs};

const DEFAULT_HORIZON: usize = 21;
const DEFAULT_VOL_WINDOW: usize = 21;
const DEFAULT_POINTS: usize = 256;
const SWEEP: [usize; 5] = [1, 2, 3, 4, 5];

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    let f = File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(BufWriter::new(f))
}

fn out_dir(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))
}

fn write_json(path: &Path, prov: &Provenance, body: Value) -> Result<(), CliError> {
    let mut doc = json!({ "provenance": prov });
    if let (Value::Object(d), Value::Object(b)) = (&mut doc, body) {
        d.extend(b);
    }
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_table(
    path: &Path,
    prov: &Provenance,
    corner: &str,
    rows: &[String],
    cols: &[&str],
    values: &DMatrix<f64>,
) -> Result<(), CliError> {
    let cols: Vec<String> = cols.iter().map(|c| c.to_string()).collect();
    write_matrix_csv(create(path)?, Some(&prov.header()), corner, rows, &cols, values)?;
    Ok(())
}

fn labels(panel: &ReturnsPanel, rows: &[usize]) -> Vec<String> {
    rows.iter().map(|&i| panel.tickers()[i].clone()).collect()
}

/// Drops instruments without variance over the window, which no
/// statistical model can standardize.
fn with_volatility(panel: ReturnsPanel, window: usize) -> Result<(ReturnsPanel, Vec<String>), CliError> {
    let vol = rolling_volatility(&panel, window)?;
    if vol.excluded.is_empty() {
        return Ok((panel, Vec::new()));
    }
    let dropped = labels(&panel, &vol.excluded);
    Ok((panel.select(&vol.kept)?, dropped))
}

fn statistical(panel: &ReturnsPanel, window: usize, opts: &StatisticalOptions) -> Result<StatisticalModel, CliError> {
    if window > panel.t() {
        return Err(Error::Range(format!("risk window {window} exceeds panel length {}", panel.t())).into());
    }
    let block = panel.returns().columns(0, window).into_owned();
    Ok(build_statistical_model_from_returns(&block, opts)?)
}

pub fn synth(args: &SynthArgs, out: &Path) -> Result<(), CliError> {
    if args.data.panel.is_some() || args.data.input.is_some() {
        return Err(CliError::Config("synth only generates; drop panel and input".into()));
    }
    let loaded = load(&args.data)?;
    let prov = Provenance::new("synth", args, loaded.seed);
    write_panel_csv(&loaded.panel, out, Some(&prov.header()))?;
    info!("wrote {} x {} panel to {}", loaded.panel.n(), loaded.panel.t(), out.display());
    Ok(())
}

fn ratio_spec(args: &OptimizeArgs) -> Result<RatioSpec, CliError> {
    let kind = args.ratio.unwrap_or(RatioKind::Fano);
    if args.p.is_some() && kind != RatioKind::Power {
        return Err(CliError::Config("p only applies to ratio power".into()));
    }
    if args.xi.is_some() && kind != RatioKind::Exp {
        return Err(CliError::Config("xi only applies to ratio exp".into()));
    }
    let spec = match kind {
        RatioKind::Sharpe => RatioSpec::Sharpe,
        RatioKind::Fano => RatioSpec::Fano,
        RatioKind::Power => RatioSpec::Power(args.p.ok_or_else(|| CliError::Config("ratio power needs p".into()))?),
        RatioKind::Exp => RatioSpec::Exp(args.xi.ok_or_else(|| CliError::Config("ratio exp needs xi".into()))?),
    };
    spec.validate()?;
    Ok(spec)
}

struct Solved {
    weights: DVector<f64>,
    metrics: PortfolioMetrics,
    detail: Value,
}

fn solve(model: &dyn RiskModel, e: &DVector<f64>, spec: &RatioSpec, long_only: bool) -> Result<Solved, CliError> {
    let (weights, detail) = if long_only {
        let s = match spec {
            RatioSpec::Sharpe => sharpe_long_only(model, e)?,
            RatioSpec::Fano => fano_long_only(model, e)?,
            other => general_long_only(model, e, other)?,
        };
        (s.weights.clone(), serde_json::to_value(&s)?)
    } else {
        let s = match spec {
            RatioSpec::Sharpe => maximize_sharpe(model, e)?,
            RatioSpec::Fano => maximize_fano(model, e)?,
            other => maximize_general(model, e, other)?,
        };
        (s.weights.clone(), serde_json::to_value(&s)?)
    };
    let metrics = evaluate_portfolio(&weights, model, e)?;
    Ok(Solved { weights, metrics, detail })
}

struct Inputs {
    model: Box<dyn RiskModel>,
    e: DVector<f64>,
    tickers: Vec<String>,
    /// Instruments dropped for zero volatility.
    excluded: Vec<String>,
    seed: Option<u64>,
}

fn data_given(d: &DataArgs) -> bool {
    let Value::Object(m) = serde_json::to_value(d).expect("args serialize") else { unreachable!() };
    m.values().any(|v| !v.is_null())
}

pub fn optimize(args: &OptimizeArgs, out: &Path) -> Result<(), CliError> {
    let spec = ratio_spec(args)?;
    let Inputs { model, e, tickers, excluded, seed } =
        match (&args.expected, &args.covariance) {
            (Some(ep), Some(cp)) => {
                if data_given(&args.data) || args.risk_model.is_some() {
                    return Err(CliError::Config("expected and covariance replace the panel and risk model".into()));
                }
                let ecsv = read_csv(ep)?;
                let ccsv = read_csv(cp)?;
                if ecsv.values.ncols() != 1 {
                    return Err(Error::DimensionMismatch { expected: 1, actual: ecsv.values.ncols() }.into());
                }
                let n = ecsv.values.nrows();
                if ccsv.values.shape() != (n, n) {
                    return Err(Error::DimensionMismatch { expected: n, actual: ccsv.values.nrows() }.into());
                }
                let model = DenseCovariance::new(ccsv.values)?;
                Inputs {
                    model: Box::new(model),
                    e: ecsv.values.column(0).into_owned(),
                    tickers: ecsv.row_labels,
                    excluded: Vec::new(),
                    seed: None,
                }
            }
            (None, None) => {
                let loaded = load(&args.data)?;
                let horizon = args.horizon.unwrap_or(DEFAULT_HORIZON);
                match &args.risk_model {
                    Some(path) => {
                        if args.remove_market_mode || args.risk_window.is_some() {
                            return Err(CliError::Config("risk model file given; drop the model-building options".into()));
                        }
                        let f = File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                        let (model, _) = read_risk_model(std::io::BufReader::new(f))?;
                        let panel = loaded.panel;
                        if model.dim() != panel.n() {
                            return Err(Error::DimensionMismatch { expected: panel.n(), actual: model.dim() }.into());
                        }
                        let e = moving_average_returns(&panel, horizon, 0)?.values;
                        Inputs { model: Box::new(model), e, tickers: panel.tickers().to_vec(), excluded: Vec::new(), seed: loaded.seed }
                    }
                    None => {
                        let window = args.risk_window.unwrap_or(loaded.panel.t());
                        let (panel, excluded) = with_volatility(loaded.panel, window)?;
                        let opts = StatisticalOptions { remove_market_mode: args.remove_market_mode, ..Default::default() };
                        let model = statistical(&panel, window, &opts)?.into_factor_model();
                        let e = moving_average_returns(&panel, horizon, 0)?.values;
                        Inputs { model: Box::new(model), e, tickers: panel.tickers().to_vec(), excluded, seed: loaded.seed }
                    }
                }
            }
            _ => return Err(CliError::Config("expected and covariance go together".into())),
        };

    let solved = solve(model.as_ref(), &e, &spec, args.long_only)?;
    let mut comparison = DMatrix::zeros(2, 5);
    for (r, s) in [RatioSpec::Sharpe, RatioSpec::Fano].iter().enumerate() {
        let m = solve(model.as_ref(), &e, s, args.long_only)?.metrics;
        comparison.row_mut(r).copy_from_slice(&[m.e, m.v, m.sharpe, m.fano, m.kappa]);
    }

    out_dir(out)?;
    let prov = Provenance::new("optimize", args, seed);
    let n = tickers.len();
    write_table(
        &out.join("weights.csv"),
        &prov,
        "ticker",
        &tickers,
        &["weight"],
        &DMatrix::from_column_slice(n, 1, solved.weights.as_slice()),
    )?;
    write_table(
        &out.join("comparison.csv"),
        &prov,
        "ratio",
        &["sharpe".to_string(), "fano".to_string()],
        &["E", "V", "S", "F", "kappa"],
        &comparison,
    )?;
    write_json(
        &out.join("solution.json"),
        &prov,
        json!({
            "ratio": spec.to_string(),
            "long_only": args.long_only,
            "tickers": tickers,
            "excluded": excluded,
            "metrics": solved.metrics,
            "solution": solved.detail,
        }),
    )
}

fn daily_table(report: &BacktestReport) -> (Vec<String>, DMatrix<f64>) {
    let rows = report.daily.iter().map(|d| d.date.clone()).collect();
    let m = DMatrix::from_fn(report.daily.len(), 8, |r, c| {
        let d = &report.daily[r];
        [d.gross_pnl, d.cost, d.pnl, d.gross_exposure, d.net_exposure, d.shares, d.bound_excess, d.pnl / report.investment]
            [c]
    });
    (rows, m)
}

pub fn backtest(args: &BacktestArgs, out: &Path) -> Result<(), CliError> {
    if args.sweep && args.n_opt.is_some() {
        return Err(CliError::Config("sweep runs every n_opt; drop n-opt".into()));
    }
    let loaded = load(&args.data)?;
    let d = MeanReversionConfig::default();
    let t = loaded.panel.t();
    let base = MeanReversionConfig {
        n_opt: args.n_opt.unwrap_or(d.n_opt),
        b_hat: args.b_hat.unwrap_or(d.b_hat),
        // short panels would otherwise leave no dates to trade
        risk_window: args.risk_window.unwrap_or(d.risk_window.min(t / 2)),
        refresh: args.refresh.unwrap_or(d.refresh),
        dollar_neutral: !args.no_neutral,
        remove_market_mode: args.remove_market_mode,
        cost_adjusted: !args.no_cost_adjust,
        reversion: args.reversion.unwrap_or(d.reversion),
    };
    let o = BacktestOptions::default();
    let cost_window = args.cost_window.unwrap_or(o.addv_window);
    let opts = BacktestOptions {
        investment: args.investment.unwrap_or(o.investment),
        bounds_fraction: args.bounds_fraction.unwrap_or(o.bounds_fraction),
        addv_window: cost_window,
        record_positions: false,
        max_days: args.max_days,
    };
    let n_opts: Vec<usize> = if args.sweep { SWEEP.to_vec() } else { vec![base.n_opt] };
    let runs = sweep_n_opt(&loaded.panel, &base, &n_opts, &CostSource::Calibrated { window: cost_window }, &opts)?;

    out_dir(out)?;
    let prov = Provenance::new("backtest", args, loaded.seed);
    let mut summary = DMatrix::zeros(runs.len(), 5);
    let mut summary_rows = Vec::new();
    for (i, (row, report)) in runs.iter().enumerate() {
        let (dates, daily) = daily_table(report);
        write_table(
            &out.join(format!("daily_nopt{}.csv", row.n_opt)),
            &prov,
            "date",
            &dates,
            &["gross_pnl", "cost", "pnl", "gross_exposure", "net_exposure", "shares", "bound_excess", "return"],
            &daily,
        )?;
        write_json(&out.join(format!("report_nopt{}.json", row.n_opt)), &prov, json!({ "report": report }))?;
        let cps = row.cps.unwrap_or(f64::NAN);
        summary.row_mut(i).copy_from_slice(&[100.0 * row.roc, row.sr, cps, row.total_pnl, report.days as f64]);
        summary_rows.push(row.n_opt.to_string());
    }
    write_table(
        &out.join("summary.csv"),
        &prov,
        "n_opt",
        &summary_rows,
        &["roc_percent", "sr", "cps_cents", "total_pnl", "days"],
        &summary,
    )
}

fn density_table(path: &Path, prov: &Provenance, name: &str, d: &DensityEstimate) -> Result<(), CliError> {
    let rows: Vec<String> = d.x.iter().map(|x| x.to_string()).collect();
    write_table(path, prov, name, &rows, &["density"], &DMatrix::from_column_slice(d.x.len(), 1, &d.density))
}

pub fn density(args: &DensityArgs, out: &Path) -> Result<(), CliError> {
    let loaded = load(&args.data)?;
    let window = args.window.unwrap_or(DEFAULT_VOL_WINDOW);
    let vol = rolling_volatility(&loaded.panel, window)?;
    let d = volatility_densities(&vol, args.points.unwrap_or(DEFAULT_POINTS))?;

    out_dir(out)?;
    let prov = Provenance::new("density", args, loaded.seed);
    density_table(&out.join("sigma_density.csv"), &prov, "sigma", &d.sigma)?;
    density_table(&out.join("log_sigma_density.csv"), &prov, "log_sigma", &d.log_sigma)?;
    write_json(
        &out.join("density_summary.json"),
        &prov,
        json!({
            "window": window,
            "instruments": vol.len(),
            "excluded": labels(&loaded.panel, &vol.excluded),
            "mean": d.mean,
            "median": d.median,
            "sigma_mode": d.sigma.mode(),
            "log_sigma_mode": d.log_sigma.mode(),
            "sigma_skewness": d.sigma_skewness,
            "log_sigma_skewness": d.log_sigma_skewness,
            "sigma_bandwidth": d.sigma.bandwidth,
            "log_sigma_bandwidth": d.log_sigma.bandwidth,
            "degenerate": d.sigma.degenerate,
        }),
    )
}

#[derive(Serialize)]
struct RiskSummary<'a> {
    instruments: usize,
    window: usize,
    excluded: Vec<String>,
    erank: f64,
    k: usize,
    rank: usize,
    market_mode_removed: bool,
    market_mode_negative_entries: usize,
    floored: Vec<&'a str>,
}

pub fn riskmodel(args: &RiskmodelArgs, out: &Path) -> Result<(), CliError> {
    let loaded = load(&args.data)?;
    let window = args.window.unwrap_or(loaded.panel.t());
    let (panel, excluded) = with_volatility(loaded.panel, window)?;
    let opts = StatisticalOptions {
        remove_market_mode: args.remove_market_mode,
        truncate_erank: args.truncate_erank,
        ..Default::default()
    };
    let model = statistical(&panel, window, &opts)?;

    out_dir(out)?;
    let prov = Provenance::new("riskmodel", args, loaded.seed);
    let mut header = prov.header();
    header.push_str(&format!("\ntickers: {}", panel.tickers().join(" ")));
    write_risk_model(create(&out.join("risk_model.txt"))?, model.factor_model(), RiskModelKind::Statistical, Some(&header))?;
    let summary = RiskSummary {
        instruments: panel.n(),
        window,
        excluded,
        erank: model.erank,
        k: model.k,
        rank: model.rank,
        market_mode_removed: model.market_mode_removed,
        market_mode_negative_entries: model.market_mode_negative_entries,
        floored: model.floored.iter().map(|&i| panel.tickers()[i].as_str()).collect(),
    };
    write_json(&out.join("riskmodel_summary.json"), &prov, json!({ "model": summary }))
}
