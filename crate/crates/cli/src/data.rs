use std::path::Path;

use fanopt_core::market_data::{read_matrix_csv, read_panel_csv, synthesize_panel, GeneratorConfig, MatrixCsv, ReturnsPanel};
use fanopt_core::Error;
use nalgebra::DMatrix;

use crate::error::CliError;
use crate::DataArgs;

pub struct Loaded {
    pub panel: ReturnsPanel,
    /// Generator seed when the panel is synthetic.
    pub seed: Option<u64>,
}

fn optional(dir: &Path, name: &str) -> Option<std::path::PathBuf> {
    let p = dir.join(name);
    p.exists().then_some(p)
}

pub fn read_csv(path: &Path) -> Result<MatrixCsv, CliError> {
    let f = std::fs::File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(read_matrix_csv(std::io::BufReader::new(f))?)
}

fn generator(args: &DataArgs) -> Result<GeneratorConfig, CliError> {
    let mut cfg = match &args.generator {
        Some(p) => GeneratorConfig::from_file(p)?,
        None => GeneratorConfig::default(),
    };
    if let Some(v) = args.n {
        cfg.n = v;
    }
    if let Some(v) = args.t {
        cfg.t = v;
    }
    if let Some(v) = args.k_factors {
        cfg.k_factors = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load(args: &DataArgs) -> Result<Loaded, CliError> {
    let csv_given = args.volumes.is_some() || args.intraday.is_some() || args.open_prices.is_some();
    let synth_given = args.generator.is_some() || args.n.is_some() || args.t.is_some() || args.k_factors.is_some();
    if args.panel.is_some() && args.input.is_some() {
        return Err(CliError::Config("give either panel or input, not both".into()));
    }
    if (args.panel.is_some() || args.input.is_some()) && synth_given {
        return Err(CliError::Config("generator settings conflict with file input".into()));
    }
    if let Some(dir) = &args.panel {
        if csv_given {
            return Err(CliError::Config("panel reads its own CSVs; drop the individual file options".into()));
        }
        let panel = read_panel_csv(
            &dir.join("returns.csv"),
            &dir.join("volumes.csv"),
            optional(dir, "intraday.csv").as_deref(),
            optional(dir, "open_prices.csv").as_deref(),
        )?;
        return Ok(Loaded { panel, seed: None });
    }
    if let Some(input) = &args.input {
        let r = read_csv(input)?;
        let volumes = match &args.volumes {
            Some(p) => {
                let v = read_csv(p)?;
                if v.row_labels != r.row_labels || v.col_labels != r.col_labels {
                    return Err(Error::Parse("volumes CSV labels do not match the returns CSV".into()).into());
                }
                v.values
            }
            None => DMatrix::zeros(r.values.nrows(), r.values.ncols()),
        };
        let mut panel = ReturnsPanel::new(r.row_labels, r.col_labels, r.values, volumes)?;
        if let Some(p) = &args.intraday {
            let prices = match &args.open_prices {
                Some(pp) => Some(read_csv(pp)?.values),
                None => None,
            };
            panel = panel.with_intraday(read_csv(p)?.values, prices)?;
        }
        return Ok(Loaded { panel, seed: None });
    }
    if csv_given {
        return Err(CliError::Config("volume and intraday files need input".into()));
    }
    let cfg = generator(args)?;
    Ok(Loaded { panel: synthesize_panel(&cfg)?, seed: Some(cfg.seed) })
}
