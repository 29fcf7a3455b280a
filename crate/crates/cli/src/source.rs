//! Where the initial bracket comes from: a JSON file, inline JSON, or a
//! seeded generator.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use nilflow::io::{bracket_from_json_str, load_bracket};
use nilflow::sample::{
    random_filiform, random_nilpotent, random_two_step, random_two_step_with_split,
};
use nilflow::Bracket;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Seeded bracket family.
///
/// Text forms: `heisenberg[:c]`, `filiform-model:c1,c2,…`, `filiform:n`,
/// `two-step:n[:m]`, `nilpotent:n`.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Generator {
    Heisenberg { c: f64 },
    FiliformModel { constants: Vec<f64> },
    Filiform { n: usize },
    TwoStep { n: usize, m: Option<usize> },
    Nilpotent { n: usize },
}

impl Generator {
    /// Builds the bracket; deterministic families ignore the seed.
    pub fn generate(&self, seed: u64) -> Bracket {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self {
            Generator::Heisenberg { c } => Bracket::heisenberg(*c),
            Generator::FiliformModel { constants } => Bracket::filiform(constants),
            Generator::Filiform { n } => random_filiform(*n, &mut rng),
            Generator::TwoStep { n, m: None } => random_two_step(*n, &mut rng),
            Generator::TwoStep { n, m: Some(m) } => random_two_step_with_split(*n, *m, &mut rng),
            Generator::Nilpotent { n } => random_nilpotent(*n, &mut rng),
        }
    }
}

fn parse_num<T: FromStr>(s: &str, what: &str) -> Result<T, String> {
    s.trim()
        .parse()
        .map_err(|_| format!("invalid {what} '{s}'"))
}

impl FromStr for Generator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let mut parts = s.split(':');
        let family = parts.next().unwrap_or_default();
        let args: Vec<&str> = parts.collect();
        let dim = |min: usize| -> Result<usize, String> {
            let n: usize = parse_num(
                args.first()
                    .ok_or(format!("'{family}' needs a dimension"))?,
                "dimension",
            )?;
            if n < min {
                return Err(format!(
                    "'{family}' needs dimension at least {min}, got {n}"
                ));
            }
            Ok(n)
        };
        let g = match family {
            "heisenberg" => Generator::Heisenberg {
                c: args.first().map(|c| parse_num(c, "constant")).transpose()?.unwrap_or(1.0),
            },
            "filiform-model" => {
                let list = args.first().ok_or("'filiform-model' needs constants, e.g. filiform-model:1,2")?;
                let constants = list
                    .split(',')
                    .map(|c| parse_num(c, "constant"))
                    .collect::<Result<Vec<f64>, _>>()?;
                Generator::FiliformModel { constants }
            }
            "filiform" => Generator::Filiform { n: dim(3)? },
            "two-step" => {
                let n = dim(3)?;
                let m = args.get(1).map(|m| parse_num::<usize>(m, "split")).transpose()?;
                if let Some(m) = m {
                    if m < 2 || m >= n {
                        return Err(format!("two-step split needs 2 <= m < n, got m = {m}, n = {n}"));
                    }
                }
                Generator::TwoStep { n, m }
            }
            "nilpotent" => Generator::Nilpotent { n: dim(1)? },
            _ => {
                return Err(format!(
                    "unknown generator '{family}' (expected heisenberg, filiform-model, filiform, two-step, nilpotent)"
                ))
            }
        };
        let max_args = match g {
            Generator::TwoStep { .. } => 2,
            _ => 1,
        };
        if args.len() > max_args {
            return Err(format!("too many ':' fields in generator '{s}'"));
        }
        Ok(g)
    }
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Generator::Heisenberg { c } => write!(f, "heisenberg:{c}"),
            Generator::FiliformModel { constants } => {
                let list: Vec<String> = constants.iter().map(f64::to_string).collect();
                write!(f, "filiform-model:{}", list.join(","))
            }
            Generator::Filiform { n } => write!(f, "filiform:{n}"),
            Generator::TwoStep { n, m: None } => write!(f, "two-step:{n}"),
            Generator::TwoStep { n, m: Some(m) } => write!(f, "two-step:{n}:{m}"),
            Generator::Nilpotent { n } => write!(f, "nilpotent:{n}"),
        }
    }
}

/// Exactly one source of the initial bracket.
#[derive(Clone, Debug, PartialEq)]
pub enum BracketSource {
    File(PathBuf),
    Inline(String),
    Generated { generator: Generator, seed: u64 },
}

impl BracketSource {
    /// Builds a source from the three mutually exclusive options.
    pub fn from_options(
        file: Option<PathBuf>,
        inline: Option<String>,
        generator: Option<Generator>,
        seed: u64,
    ) -> CliResult<Self> {
        match (file, inline, generator) {
            (Some(p), None, None) => Ok(BracketSource::File(p)),
            (None, Some(s), None) => Ok(BracketSource::Inline(s)),
            (None, None, Some(generator)) => Ok(BracketSource::Generated { generator, seed }),
            (None, None, None) => Err(CliError::Config(
                "no bracket given: use --bracket, --inline or --generate".into(),
            )),
            _ => Err(CliError::Config(
                "give exactly one of --bracket, --inline, --generate".into(),
            )),
        }
    }

    pub fn load(&self) -> CliResult<Bracket> {
        let b = match self {
            BracketSource::File(p) => load_bracket(p).map_err(|e| match e {
                nilflow::Error::Io(io) => CliError::Config(format!("{}: {io}", p.display())),
                other => CliError::Config(format!("{}: {other}", p.display())),
            })?,
            BracketSource::Inline(s) => bracket_from_json_str(s)?,
            BracketSource::Generated { generator, seed } => generator.generate(*seed),
        };
        Ok(b)
    }

    pub fn describe(&self) -> String {
        match self {
            BracketSource::File(p) => format!("file:{}", p.display()),
            BracketSource::Inline(_) => "inline".into(),
            BracketSource::Generated { generator, seed } => format!("{generator} (seed {seed})"),
        }
    }
}
