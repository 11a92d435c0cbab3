use std::fmt;
use std::str::FromStr;

use super::expr::{ExpressionTree, Grammar, Symbol};
use super::ImageGenError;
use crate::seeds;

/// Inputs available to the initialisation functions.
pub const INIT_INPUTS: [Symbol; 1] = [Symbol::P];

/// Inputs available to the update functions: particle number, timestep and
/// the ten function values of the particle's previous state.
pub const UPDATE_INPUTS: [Symbol; 12] = [
    Symbol::P,
    Symbol::T,
    Symbol::F(1),
    Symbol::F(2),
    Symbol::F(3),
    Symbol::F(4),
    Symbol::F(5),
    Symbol::F(6),
    Symbol::F(7),
    Symbol::F(8),
    Symbol::F(9),
    Symbol::F(10),
];

/// Ten functions driving a particle system: `init[0..5]` give a particle's
/// starting `(x, y, r, g, b)`, `update[0..5]` give the same five quantities at
/// each timestep.
///
/// Function values are addressed as `f1..f10`: `f1..f5` are the outputs of the
/// initialisation functions and `f6..f10` those of the update functions.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleGenome {
    pub init: [ExpressionTree; 5],
    pub update: [ExpressionTree; 5],
    pub rng_seed: u64,
}

impl ParticleGenome {
    pub fn new(
        init: [ExpressionTree; 5],
        update: [ExpressionTree; 5],
        rng_seed: u64,
    ) -> Result<Self, ImageGenError> {
        let g = Self {
            init,
            update,
            rng_seed,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), ImageGenError> {
        for (i, tree) in self.init.iter().enumerate() {
            if let Some(s) = tree.symbols().into_iter().find(|s| !INIT_INPUTS.contains(s)) {
                return Err(ImageGenError::InvalidGenome(format!("i{} reads `{s}`", i + 1)));
            }
        }
        for (i, tree) in self.update.iter().enumerate() {
            if let Some(s) = tree.symbols().into_iter().find(|s| !UPDATE_INPUTS.contains(s)) {
                return Err(ImageGenError::InvalidGenome(format!("u{} reads `{s}`", i + 1)));
            }
        }
        Ok(())
    }

    pub fn trees(&self) -> impl Iterator<Item = &ExpressionTree> {
        self.init.iter().chain(self.update.iter())
    }
}

pub fn random_genome(seed: u64, grammar: &Grammar) -> Result<ParticleGenome, ImageGenError> {
    grammar.validate()?;
    let mut rng = seeds::rng(seed);
    let mut tree = |inputs: &[Symbol]| {
        ExpressionTree::new(grammar.grow(&mut rng, grammar.max_depth, inputs))
            .expect("grammar depth validated")
    };
    let init = std::array::from_fn(|_| tree(&INIT_INPUTS));
    let update = std::array::from_fn(|_| tree(&UPDATE_INPUTS));
    Ok(ParticleGenome {
        init,
        update,
        rng_seed: seed,
    })
}

/// Red, green and blue trees over `x` and `y` for a coordinate image.
pub fn random_coordinate_trees(seed: u64, grammar: &Grammar) -> Result<[ExpressionTree; 3], ImageGenError> {
    grammar.validate()?;
    let mut rng = seeds::rng(seed);
    Ok(std::array::from_fn(|_| {
        ExpressionTree::new(grammar.grow(&mut rng, grammar.max_depth, &[Symbol::X, Symbol::Y]))
            .expect("grammar depth validated")
    }))
}

/// Independently replaces each node with a fresh random subtree with
/// probability `rate`. The background seed is carried over unchanged.
pub fn mutate_genome(
    genome: &ParticleGenome,
    seed: u64,
    rate: f64,
    grammar: &Grammar,
) -> Result<ParticleGenome, ImageGenError> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(ImageGenError::InvalidRate(rate));
    }
    grammar.validate()?;
    let mut rng = seeds::rng(seed);
    let mut mutate = |tree: &ExpressionTree, inputs: &[Symbol]| {
        let node = grammar.mutate(&mut rng, tree.root(), 1, rate, inputs);
        // Untouched subtrees of an over-deep input may still exceed the
        // grammar's depth but never the global limit.
        ExpressionTree::new(node).expect("mutation preserves global depth bound")
    };
    let init = std::array::from_fn(|i| mutate(&genome.init[i], &INIT_INPUTS));
    let update = std::array::from_fn(|i| mutate(&genome.update[i], &UPDATE_INPUTS));
    Ok(ParticleGenome {
        init,
        update,
        rng_seed: genome.rng_seed,
    })
}

/// Sidecar format: a `seed` line followed by one `i1`..`u5` line per tree.
impl fmt::Display for ParticleGenome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "seed {}", self.rng_seed)?;
        for (i, t) in self.init.iter().enumerate() {
            writeln!(f, "i{} {t}", i + 1)?;
        }
        for (i, t) in self.update.iter().enumerate() {
            writeln!(f, "u{} {t}", i + 1)?;
        }
        Ok(())
    }
}

impl FromStr for ParticleGenome {
    type Err = ImageGenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut seed = None;
        let mut init: [Option<ExpressionTree>; 5] = Default::default();
        let mut update: [Option<ExpressionTree>; 5] = Default::default();
        for line in s.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (key, rest) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| ImageGenError::Parse(format!("bad genome line `{line}`")))?;
            let rest = rest.trim();
            let slot = |prefix: char| -> Option<usize> {
                let k: usize = key.strip_prefix(prefix)?.parse().ok()?;
                (1..=5).contains(&k).then_some(k - 1)
            };
            if key == "seed" {
                seed = Some(rest.parse().map_err(|_| ImageGenError::Parse(format!("bad seed `{rest}`")))?);
            } else if let Some(k) = slot('i') {
                init[k] = Some(rest.parse()?);
            } else if let Some(k) = slot('u') {
                update[k] = Some(rest.parse()?);
            } else {
                return Err(ImageGenError::Parse(format!("unknown key `{key}`")));
            }
        }
        let missing = |name: &str| ImageGenError::Parse(format!("missing {name}"));
        let seed = seed.ok_or_else(|| missing("seed"))?;
        let take = |arr: &mut [Option<ExpressionTree>; 5], p: char| -> Result<[ExpressionTree; 5], ImageGenError> {
            let mut out: Vec<ExpressionTree> = Vec::with_capacity(5);
            for (i, t) in arr.iter_mut().enumerate() {
                out.push(t.take().ok_or_else(|| missing(&format!("{p}{}", i + 1)))?);
            }
            Ok(out.try_into().expect("five trees"))
        };
        let init = take(&mut init, 'i')?;
        let update = take(&mut update, 'u')?;
        ParticleGenome::new(init, update, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_genome() {
        let g = Grammar::default();
        assert_eq!(random_genome(7, &g).unwrap(), random_genome(7, &g).unwrap());
    }

    #[test]
    fn different_seeds_differ() {
        let g = Grammar::default();
        for s in 0..100u64 {
            let a = random_genome(2 * s + 7, &g).unwrap();
            let b = random_genome(2 * s + 8, &g).unwrap();
            assert!(a.init != b.init || a.update != b.update, "seed pair {s}");
        }
    }

    #[test]
    fn depth_one_gives_leaves() {
        let g = Grammar::with_max_depth(1);
        for s in 0..20 {
            let genome = random_genome(s, &g).unwrap();
            assert!(genome.trees().all(|t| t.root().is_leaf()));
        }
    }

    #[test]
    fn input_sets_respected() {
        let g = Grammar::with_max_depth(7);
        for s in 0..50 {
            random_genome(s, &g).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn zero_rate_is_identity() {
        let g = Grammar::default();
        let genome = random_genome(11, &g).unwrap();
        assert_eq!(mutate_genome(&genome, 99, 0.0, &g).unwrap(), genome);
    }

    #[test]
    fn full_rate_depth_one_gives_fresh_leaves() {
        let deep = random_genome(11, &Grammar::with_max_depth(6)).unwrap();
        let g = Grammar::with_max_depth(1);
        let m = mutate_genome(&deep, 5, 1.0, &g).unwrap();
        assert!(m.trees().all(|t| t.root().is_leaf()));
        m.validate().unwrap();
    }

    #[test]
    fn mutation_is_deterministic_and_valid() {
        let g = Grammar::default();
        let genome = random_genome(3, &g).unwrap();
        let a = mutate_genome(&genome, 42, 0.1, &g).unwrap();
        let b = mutate_genome(&genome, 42, 0.1, &g).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
        assert!(a.trees().all(|t| t.depth() <= g.max_depth));
    }

    #[test]
    fn rejects_bad_rate() {
        let g = Grammar::default();
        let genome = random_genome(3, &g).unwrap();
        assert!(mutate_genome(&genome, 1, 1.5, &g).is_err());
        assert!(mutate_genome(&genome, 1, f64::NAN, &g).is_err());
    }

    #[test]
    fn coordinate_trees_read_only_xy() {
        let g = Grammar::default();
        for s in 0..30 {
            let trees = random_coordinate_trees(s, &g).unwrap();
            assert!(trees.iter().all(|t| t.uses_only(&[Symbol::X, Symbol::Y])));
        }
        assert_eq!(random_coordinate_trees(4, &g).unwrap(), random_coordinate_trees(4, &g).unwrap());
    }

    #[test]
    fn sidecar_roundtrip() {
        let genome = random_genome(1234, &Grammar::default()).unwrap();
        let text = genome.to_string();
        assert_eq!(text.parse::<ParticleGenome>().unwrap(), genome);
    }

    #[test]
    fn init_may_not_read_timestep() {
        let bad: ExpressionTree = "(add p t)".parse().unwrap();
        let ok = ExpressionTree::constant(0.0);
        let init = [bad, ok.clone(), ok.clone(), ok.clone(), ok.clone()];
        let update = std::array::from_fn(|_| ok.clone());
        assert!(ParticleGenome::new(init, update, 0).is_err());
    }
}
