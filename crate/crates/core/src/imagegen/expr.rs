//! Closed-form numeric expression trees and their total evaluator.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::ImageGenError;
use crate::sexpr::{self, Sexpr};

/// Maximum tree depth accepted anywhere (a bare leaf has depth 1).
pub const MAX_TREE_DEPTH: usize = 12;

/// Input variables an expression may read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Symbol {
    /// Particle number, 1-based.
    P,
    /// Timestep, 1-based.
    T,
    /// Normalised horizontal pixel coordinate in `[0, 1]`.
    X,
    /// Normalised vertical pixel coordinate in `[0, 1]`.
    Y,
    /// Value of function `k` (1..=10) from the particle's previous state.
    F(u8),
}

impl Symbol {
    pub const SLOTS: usize = 14;

    fn slot(self) -> usize {
        match self {
            Symbol::P => 0,
            Symbol::T => 1,
            Symbol::X => 2,
            Symbol::Y => 3,
            Symbol::F(k) => 3 + k as usize,
        }
    }

    pub fn prev(k: u8) -> Symbol {
        assert!((1..=10).contains(&k), "function index out of range");
        Symbol::F(k)
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::P => f.write_str("p"),
            Symbol::T => f.write_str("t"),
            Symbol::X => f.write_str("x"),
            Symbol::Y => f.write_str("y"),
            Symbol::F(k) => write!(f, "f{k}"),
        }
    }
}

impl FromStr for Symbol {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "p" => Ok(Symbol::P),
            "t" => Ok(Symbol::T),
            "x" => Ok(Symbol::X),
            "y" => Ok(Symbol::Y),
            _ => {
                let k: u8 = s.strip_prefix('f').ok_or(())?.parse().map_err(|_| ())?;
                if (1..=10).contains(&k) {
                    Ok(Symbol::F(k))
                } else {
                    Err(())
                }
            }
        }
    }
}

/// Variable bindings for [`ExpressionTree::eval`].
#[derive(Debug, Clone, Copy, Default)]
pub struct Bindings {
    values: [f64; Symbol::SLOTS],
    bound: u16,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn set(&mut self, sym: Symbol, value: f64) {
        let slot = sym.slot();
        self.values[slot] = value;
        self.bound |= 1 << slot;
    }

    pub fn with(mut self, sym: Symbol, value: f64) -> Self {
        self.set(sym, value);
        self
    }

    #[inline]
    pub fn get(&self, sym: Symbol) -> Option<f64> {
        let slot = sym.slot();
        (self.bound & (1 << slot) != 0).then(|| self.values[slot])
    }
}

impl FromIterator<(Symbol, f64)> for Bindings {
    fn from_iter<I: IntoIterator<Item = (Symbol, f64)>>(iter: I) -> Self {
        let mut b = Bindings::new();
        for (s, v) in iter {
            b.set(s, v);
        }
        b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Abs,
    Sqrt,
    Negate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    Pow,
    Min,
    Max,
}

impl UnaryOp {
    pub const ALL: [UnaryOp; 8] = [
        UnaryOp::Sin,
        UnaryOp::Cos,
        UnaryOp::Tan,
        UnaryOp::Exp,
        UnaryOp::Log,
        UnaryOp::Abs,
        UnaryOp::Sqrt,
        UnaryOp::Negate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Tan => "tan",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Abs => "abs",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Negate => "neg",
        }
    }

    #[inline]
    fn apply(self, a: f64) -> f64 {
        match self {
            UnaryOp::Sin => a.sin(),
            UnaryOp::Cos => a.cos(),
            UnaryOp::Tan => a.tan(),
            UnaryOp::Exp => a.exp(),
            UnaryOp::Log if a <= 0.0 => 0.0,
            UnaryOp::Log => a.ln(),
            UnaryOp::Abs => a.abs(),
            UnaryOp::Sqrt if a < 0.0 => 0.0,
            UnaryOp::Sqrt => a.sqrt(),
            UnaryOp::Negate => -a,
        }
    }
}

impl BinaryOp {
    pub const ALL: [BinaryOp; 8] = [
        BinaryOp::Add,
        BinaryOp::Sub,
        BinaryOp::Mul,
        BinaryOp::Div,
        BinaryOp::Mod,
        BinaryOp::Pow,
        BinaryOp::Min,
        BinaryOp::Max,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
            BinaryOp::Mod => "mod",
            BinaryOp::Pow => "pow",
            BinaryOp::Min => "min",
            BinaryOp::Max => "max",
        }
    }

    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div if b == 0.0 => 0.0,
            BinaryOp::Div => a / b,
            BinaryOp::Mod if b == 0.0 => 0.0,
            BinaryOp::Mod => a.rem_euclid(b),
            BinaryOp::Pow if a == 0.0 && b < 0.0 => 0.0,
            BinaryOp::Pow => a.powf(b),
            BinaryOp::Min => a.min(b),
            BinaryOp::Max => a.max(b),
        }
    }
}

fn unary_from_name(s: &str) -> Option<UnaryOp> {
    UnaryOp::ALL.into_iter().find(|op| op.name() == s)
}

fn binary_from_name(s: &str) -> Option<BinaryOp> {
    BinaryOp::ALL.into_iter().find(|op| op.name() == s)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprNode {
    Constant(f64),
    Input(Symbol),
    Unary(UnaryOp, Box<ExprNode>),
    Binary(BinaryOp, Box<ExprNode>, Box<ExprNode>),
}

/// Undefined or non-finite results collapse to zero.
#[inline]
fn total(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        0.0
    }
}

impl ExprNode {
    pub fn constant(v: f64) -> Self {
        ExprNode::Constant(v)
    }

    pub fn input(s: Symbol) -> Self {
        ExprNode::Input(s)
    }

    pub fn unary(op: UnaryOp, child: ExprNode) -> Self {
        ExprNode::Unary(op, Box::new(child))
    }

    pub fn binary(op: BinaryOp, l: ExprNode, r: ExprNode) -> Self {
        ExprNode::Binary(op, Box::new(l), Box::new(r))
    }

    pub fn depth(&self) -> usize {
        match self {
            ExprNode::Constant(_) | ExprNode::Input(_) => 1,
            ExprNode::Unary(_, c) => 1 + c.depth(),
            ExprNode::Binary(_, l, r) => 1 + l.depth().max(r.depth()),
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, ExprNode::Constant(_) | ExprNode::Input(_))
    }

    fn eval(&self, env: &Bindings) -> Result<f64, ImageGenError> {
        Ok(match self {
            ExprNode::Constant(v) => total(*v),
            ExprNode::Input(s) => total(env.get(*s).ok_or(ImageGenError::UnboundInput(*s))?),
            ExprNode::Unary(op, c) => total(op.apply(c.eval(env)?)),
            ExprNode::Binary(op, l, r) => total(op.apply(l.eval(env)?, r.eval(env)?)),
        })
    }

    fn visit_symbols(&self, out: &mut Vec<Symbol>) {
        match self {
            ExprNode::Constant(_) => {}
            ExprNode::Input(s) => {
                if !out.contains(s) {
                    out.push(*s)
                }
            }
            ExprNode::Unary(_, c) => c.visit_symbols(out),
            ExprNode::Binary(_, l, r) => {
                l.visit_symbols(out);
                r.visit_symbols(out);
            }
        }
    }

    fn to_sexpr(&self) -> Sexpr {
        match self {
            ExprNode::Constant(v) => Sexpr::Atom(format!("{v:?}")),
            ExprNode::Input(s) => Sexpr::Atom(s.to_string()),
            ExprNode::Unary(op, c) => Sexpr::List(vec![Sexpr::Atom(op.name().into()), c.to_sexpr()]),
            ExprNode::Binary(op, l, r) => Sexpr::List(vec![
                Sexpr::Atom(op.name().into()),
                l.to_sexpr(),
                r.to_sexpr(),
            ]),
        }
    }

    fn from_sexpr(e: &Sexpr) -> Result<Self, ImageGenError> {
        let bad = |msg: String| ImageGenError::Parse(msg);
        match e {
            Sexpr::Atom(a) => {
                if let Ok(s) = a.parse::<Symbol>() {
                    return Ok(ExprNode::Input(s));
                }
                let v: f64 = a.parse().map_err(|_| bad(format!("unknown atom `{a}`")))?;
                if !v.is_finite() {
                    return Err(bad(format!("non-finite constant `{a}`")));
                }
                Ok(ExprNode::Constant(v))
            }
            Sexpr::List(items) => {
                let head = items
                    .first()
                    .and_then(Sexpr::as_atom)
                    .ok_or_else(|| bad("list without operator".into()))?;
                match (items.len(), unary_from_name(head), binary_from_name(head)) {
                    (2, Some(op), _) => Ok(ExprNode::unary(op, Self::from_sexpr(&items[1])?)),
                    (3, _, Some(op)) => Ok(ExprNode::binary(
                        op,
                        Self::from_sexpr(&items[1])?,
                        Self::from_sexpr(&items[2])?,
                    )),
                    _ => Err(bad(format!("bad form `{e}`"))),
                }
            }
        }
    }
}

/// A numeric program over named inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionTree {
    root: ExprNode,
}

impl ExpressionTree {
    pub fn new(root: ExprNode) -> Result<Self, ImageGenError> {
        let depth = root.depth();
        if depth > MAX_TREE_DEPTH {
            return Err(ImageGenError::DepthExceeded {
                depth,
                max: MAX_TREE_DEPTH,
            });
        }
        Ok(Self { root })
    }

    pub fn constant(v: f64) -> Self {
        Self {
            root: ExprNode::Constant(v),
        }
    }

    pub fn root(&self) -> &ExprNode {
        &self.root
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    /// Evaluates the tree. Division by zero, `log` of non-positive values,
    /// `0^negative` and any non-finite intermediate evaluate to `0.0`.
    pub fn eval(&self, env: &Bindings) -> Result<f64, ImageGenError> {
        self.root.eval(env)
    }

    /// Distinct input symbols in first-occurrence order.
    pub fn symbols(&self) -> Vec<Symbol> {
        let mut out = Vec::new();
        self.root.visit_symbols(&mut out);
        out
    }

    pub fn uses_only(&self, allowed: &[Symbol]) -> bool {
        self.symbols().iter().all(|s| allowed.contains(s))
    }
}

/// Free-function form of [`ExpressionTree::eval`].
pub fn eval_expr(tree: &ExpressionTree, env: &Bindings) -> Result<f64, ImageGenError> {
    tree.eval(env)
}

impl fmt::Display for ExpressionTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.root.to_sexpr())
    }
}

impl FromStr for ExpressionTree {
    type Err = ImageGenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let e = sexpr::parse(s).map_err(|e| ImageGenError::Parse(e.to_string()))?;
        ExpressionTree::new(ExprNode::from_sexpr(&e)?)
    }
}

/// Shape of randomly generated trees.
#[derive(Debug, Clone, PartialEq)]
pub struct Grammar {
    pub max_depth: usize,
    /// Probability that a non-forced node becomes a leaf.
    pub leaf_probability: f64,
    /// Probability that a leaf is a constant rather than an input.
    pub constant_probability: f64,
    /// Constants are drawn uniformly from `[-constant_range, constant_range]`
    /// and rounded to two decimals.
    pub constant_range: f64,
    pub unary_weight: f64,
    pub binary_weight: f64,
    /// Indexed like [`UnaryOp::ALL`].
    pub unary_op_weights: [f64; 8],
    /// Indexed like [`BinaryOp::ALL`].
    pub binary_op_weights: [f64; 8],
}

impl Default for Grammar {
    fn default() -> Self {
        Self {
            max_depth: 5,
            leaf_probability: 0.3,
            constant_probability: 0.35,
            constant_range: 10.0,
            unary_weight: 1.0,
            binary_weight: 1.5,
            unary_op_weights: [2.0, 2.0, 0.5, 0.5, 1.0, 1.0, 1.0, 1.0],
            binary_op_weights: [2.0, 2.0, 2.0, 1.0, 1.0, 0.5, 1.0, 1.0],
        }
    }
}

impl Grammar {
    pub fn with_max_depth(max_depth: usize) -> Self {
        Self {
            max_depth,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ImageGenError> {
        if self.max_depth == 0 || self.max_depth > MAX_TREE_DEPTH {
            return Err(ImageGenError::InvalidGrammar(format!(
                "max_depth must be in 1..={MAX_TREE_DEPTH}, got {}",
                self.max_depth
            )));
        }
        let probs = [self.leaf_probability, self.constant_probability];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(ImageGenError::InvalidGrammar("probabilities must lie in [0, 1]".into()));
        }
        let weights_ok = |w: &[f64]| w.iter().all(|x| *x >= 0.0) && w.iter().sum::<f64>() > 0.0;
        if !weights_ok(&self.unary_op_weights)
            || !weights_ok(&self.binary_op_weights)
            || !weights_ok(&[self.unary_weight, self.binary_weight])
            || self.unary_weight < 0.0
            || self.binary_weight < 0.0
        {
            return Err(ImageGenError::InvalidGrammar("weights must be non-negative with a positive sum".into()));
        }
        if !(self.constant_range.is_finite() && self.constant_range >= 0.0) {
            return Err(ImageGenError::InvalidGrammar("constant_range must be finite".into()));
        }
        Ok(())
    }

    /// Grows a random tree of depth at most `budget` over `inputs`.
    pub(crate) fn grow<R: Rng>(&self, rng: &mut R, budget: usize, inputs: &[Symbol]) -> ExprNode {
        if budget <= 1 || rng.gen::<f64>() < self.leaf_probability {
            return self.leaf(rng, inputs);
        }
        let unary = rng.gen::<f64>() * (self.unary_weight + self.binary_weight) < self.unary_weight;
        if unary {
            let op = UnaryOp::ALL[weighted_index(rng, &self.unary_op_weights)];
            ExprNode::unary(op, self.grow(rng, budget - 1, inputs))
        } else {
            let op = BinaryOp::ALL[weighted_index(rng, &self.binary_op_weights)];
            let l = self.grow(rng, budget - 1, inputs);
            let r = self.grow(rng, budget - 1, inputs);
            ExprNode::binary(op, l, r)
        }
    }

    fn leaf<R: Rng>(&self, rng: &mut R, inputs: &[Symbol]) -> ExprNode {
        if inputs.is_empty() || rng.gen::<f64>() < self.constant_probability {
            let v = rng.gen_range(-1.0..=1.0) * self.constant_range;
            ExprNode::Constant((v * 100.0).round() / 100.0)
        } else {
            ExprNode::Input(inputs[rng.gen_range(0..inputs.len())])
        }
    }

    /// Replaces each node with a fresh subtree with probability `rate`,
    /// keeping the overall depth within `max_depth`.
    pub(crate) fn mutate<R: Rng>(
        &self,
        rng: &mut R,
        node: &ExprNode,
        depth: usize,
        rate: f64,
        inputs: &[Symbol],
    ) -> ExprNode {
        if rng.gen::<f64>() < rate {
            let budget = self.max_depth.saturating_sub(depth - 1).max(1);
            return self.grow(rng, budget, inputs);
        }
        match node {
            ExprNode::Constant(_) | ExprNode::Input(_) => node.clone(),
            ExprNode::Unary(op, c) => ExprNode::unary(*op, self.mutate(rng, c, depth + 1, rate, inputs)),
            ExprNode::Binary(op, l, r) => {
                let l = self.mutate(rng, l, depth + 1, rate, inputs);
                let r = self.mutate(rng, r, depth + 1, rate, inputs);
                ExprNode::binary(*op, l, r)
            }
        }
    }
}

pub(crate) fn weighted_index<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let sum: f64 = weights.iter().sum();
    let mut x = rng.gen::<f64>() * sum;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    // Rounding slack lands on the last positive weight.
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}
