//! Built-in configurations that regenerate the data behind each figure.

use std::path::{Path, PathBuf};

use clap::Parser;

use crate::output::Format;
use crate::{config_hash, emit, execute, Cli, CliError, RecipeArgs};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recipe {
    pub name: &'static str,
    pub description: &'static str,
    /// Subcommand and flags, as typed on the command line.
    pub args: Vec<String>,
    /// Seed used unless the caller passes one.
    pub default_seed: u64,
}

fn recipe(name: &'static str, description: &'static str, default_seed: u64, args: &str) -> Recipe {
    Recipe {
        name,
        description,
        args: args.split_whitespace().map(str::to_string).collect(),
        default_seed,
    }
}

/// fig3, fig4, fig7, fig8, fig9 and fig10; `fast` shrinks fig10 to n = 16.
pub fn figure_recipes(fast: bool) -> Vec<Recipe> {
    let fig10 = if fast {
        "train --schedule static-exp,one-peer-exp,grid,ring --n 16 --d 10 --samples-per-node 2000 \
         --gamma 0.2 --gamma-period 1000 --gamma-factor 0.5 --beta 0.8 --iters 8000 --trials 20 \
         --record-every 10 --data-seed 2021"
    } else {
        "train --schedule static-exp,one-peer-exp,grid,ring --n 64 --d 10 --samples-per-node 14000 \
         --gamma 0.2 --gamma-period 1000 --gamma-factor 0.5 --beta 0.8 --iters 8000 --trials 20 \
         --record-every 50 --data-seed 2021"
    };
    vec![
        recipe(
            "fig3",
            "spectral gap of ring, grid and static exponential graphs, n = 4..290",
            0,
            "spectrum --family ring,grid,static-exp --n-range 4:290",
        ),
        recipe(
            "fig4",
            "consensus residues at n = 32: static exponential, one-peer, random matching",
            0,
            "consensus --schedule static-exp,cyclic,bipartite --n 32 --steps 20",
        ),
        recipe(
            "fig7",
            "one-peer residues when n is not a power of two",
            0,
            "consensus --schedule cyclic --n 3,5,6,7,12,24 --steps 30",
        ),
        recipe(
            "fig8",
            "one-peer residues under permutation and uniform hop sampling",
            0,
            "consensus --schedule permutation,uniform --n 32 --steps 20 --trials 10",
        ),
        recipe(
            "fig9",
            "norm of the centered one-peer product along k",
            0,
            "consensus --metric product-norm --schedule cyclic --n 4,8,16,32 --steps 12",
        ),
        recipe("fig10", "DmSGD convergence over several topologies vs parallel", 7, fig10),
    ]
}

/// Runs one recipe into `dir` and returns its summary line.
pub fn run_one(r: &Recipe, seed: Option<u64>, format: Format, dir: &Path) -> Result<String, CliError> {
    let seed = seed.unwrap_or(r.default_seed);
    let mut argv = vec!["expograph".to_string()];
    argv.extend(r.args.iter().cloned());
    let cli = Cli::try_parse_from(&argv).map_err(|e| CliError::usage(r.name, e.to_string()))?;
    let hash = config_hash(&cli.command, seed, format);
    let product = execute(&cli.command, seed)?;
    let path: PathBuf = dir.join(format!("{}.{}", r.name, format.extension()));
    let line = emit(&product, r.name, &hash, format, Some(&path))?;
    Ok(line)
}

pub fn run(a: &RecipeArgs, seed: Option<u64>, format: Format, out: Option<&Path>) -> Result<Vec<String>, CliError> {
    let all = figure_recipes(a.fast);
    if a.list {
        return Ok(all.iter().map(|r| format!("{:6} {}", r.name, r.description)).collect());
    }
    let name = a
        .name
        .as_deref()
        .ok_or_else(|| CliError::usage("recipe", "name a recipe (or `all`); --list shows them"))?;
    let chosen: Vec<&Recipe> = match name {
        "all" => all.iter().collect(),
        _ => vec![all.iter().find(|r| r.name == name).ok_or_else(|| {
            let names: Vec<&str> = all.iter().map(|r| r.name).collect();
            CliError::usage("recipe", format!("unknown recipe `{name}`; expected one of {}", names.join(", ")))
        })?],
    };
    let dir = out.unwrap_or(Path::new("."));
    chosen.into_iter().map(|r| run_one(r, seed, format, dir)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Command, Metric};

    #[test]
    fn every_recipe_parses() {
        for fast in [false, true] {
            for r in figure_recipes(fast) {
                let mut argv = vec!["expograph".to_string()];
                argv.extend(r.args.clone());
                assert!(Cli::try_parse_from(&argv).is_ok(), "{}", r.name);
            }
        }
    }

    #[test]
    fn recipe_contents() {
        let parse = |r: &Recipe| {
            let mut argv = vec!["expograph".to_string()];
            argv.extend(r.args.clone());
            Cli::try_parse_from(&argv).unwrap().command
        };
        let all = figure_recipes(false);
        let Command::Spectrum(s) = parse(&all[0]) else { panic!() };
        let r = s.n_range.unwrap();
        assert_eq!((r.start, r.end, s.family.len()), (4, 290, 3));
        let Command::Consensus(c) = parse(&all[1]) else { panic!() };
        assert_eq!((c.n.as_slice(), c.schedule.len()), (&[32][..], 3));
        let Command::Consensus(c) = parse(&all[4]) else { panic!() };
        assert_eq!(c.metric, Metric::ProductNorm);
        let Command::Train(t) = parse(&all[5]) else { panic!() };
        assert_eq!((t.n, t.d, t.samples_per_node, t.trials), (64, 10, 14000, 20));
        let Command::Train(t) = parse(&figure_recipes(true)[5]) else { panic!() };
        assert_eq!(t.n, 16);
    }
}
