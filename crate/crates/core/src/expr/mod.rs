//! Scalar arithmetic expressions over positional variables `x1..x9`.
//!
//! Every density, constraint map, chart and forward model in this crate is an
//! [`Expression`]. Expressions are immutable once parsed, evaluate on plain
//! reals or on [`DualNumber`]s (forward-mode gradients), and print back to a
//! fully parenthesized source form that re-parses to the same tree.
//!
//! Evaluation never returns a silent NaN: division by zero, logarithms of
//! non-positive numbers, `atan2(0, 0)` and any non-finite intermediate are
//! reported as [`ExprError::Domain`].

mod dual;
mod parse;

use std::fmt;
use std::str::FromStr;

pub use dual::{DualNumber, Scalar};

/// Highest supported variable index (`x1..x9`).
pub const MAX_VARS: usize = 9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExprError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown identifier '{name}' at byte {pos}")]
    UnknownIdentifier { pos: usize, name: String },
    #[error("function '{name}' at byte {pos} takes {expected} argument(s), found {found}")]
    Arity {
        pos: usize,
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("domain error in {op} at {point:?}")]
    Domain { op: &'static str, point: Vec<f64> },
    #[error("expression uses x{needed} but the point has dimension {got}")]
    Dimension { needed: usize, got: usize },
}

impl ExprError {
    pub fn is_domain(&self) -> bool {
        matches!(self, ExprError::Domain { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sqrt,
    Abs,
    Sign,
    Sin,
    Cos,
    Atan2,
    Erf,
    Min,
    Max,
}

impl Func {
    pub const ALL: [Func; 11] = [
        Func::Exp,
        Func::Log,
        Func::Sqrt,
        Func::Abs,
        Func::Sign,
        Func::Sin,
        Func::Cos,
        Func::Atan2,
        Func::Erf,
        Func::Min,
        Func::Max,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Sign => "sign",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Atan2 => "atan2",
            Func::Erf => "erf",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Atan2 | Func::Min | Func::Max => 2,
            _ => 1,
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }
}

/// Expression tree node. Variables are zero-based (`Var(0)` is `x1`).
#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Const(f64),
    Var(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

impl Node {
    fn map_vars(&self, f: &impl Fn(usize) -> usize) -> Node {
        match self {
            Node::Const(c) => Node::Const(*c),
            Node::Var(i) => Node::Var(f(*i)),
            Node::Neg(a) => Node::Neg(Box::new(a.map_vars(f))),
            Node::Bin(op, a, b) => Node::Bin(*op, Box::new(a.map_vars(f)), Box::new(b.map_vars(f))),
            Node::Call(func, args) => Node::Call(*func, args.iter().map(|a| a.map_vars(f)).collect()),
        }
    }

    fn max_var(&self) -> Option<usize> {
        match self {
            Node::Const(_) => None,
            Node::Var(i) => Some(*i),
            Node::Neg(a) => a.max_var(),
            Node::Bin(_, a, b) => a.max_var().max(b.max_var()),
            Node::Call(_, args) => args.iter().filter_map(Node::max_var).max(),
        }
    }
}

/// A parsed expression in the variables `x1..xn`.
#[derive(Clone, Debug, PartialEq)]
pub struct Expression {
    root: Node,
    arity: usize,
}

impl Expression {
    pub fn parse(source: &str) -> Result<Self, ExprError> {
        let root = parse::Parser::parse(source)?;
        Ok(Expression::from_node(root))
    }

    pub fn from_node(root: Node) -> Self {
        let arity = root.max_var().map_or(1, |i| i + 1);
        Expression { root, arity }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    /// Number of leading coordinates the expression reads (at least 1).
    pub fn arity(&self) -> usize {
        self.arity
    }

    /// The same expression with variable `x(i+1)` replaced by `x(f(i)+1)`
    /// (indices are zero-based).
    pub fn rename_vars(&self, f: impl Fn(usize) -> usize) -> Expression {
        Expression::from_node(self.root.map_vars(&f))
    }

    /// `self * other`.
    pub fn times(&self, other: &Expression) -> Expression {
        Expression::from_node(Node::Bin(
            BinOp::Mul,
            Box::new(self.root.clone()),
            Box::new(other.root.clone()),
        ))
    }

    /// True when the expression reads no variable at all.
    pub fn is_constant(&self) -> bool {
        self.root.max_var().is_none()
    }

    fn check_dim(&self, got: usize) -> Result<(), ExprError> {
        if self.root.max_var().is_some() && got < self.arity {
            return Err(ExprError::Dimension {
                needed: self.arity,
                got,
            });
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, ExprError> {
        self.check_dim(x.len())?;
        eval_node(&self.root, x, &0.0).map_err(|op| ExprError::Domain {
            op,
            point: x.to_vec(),
        })
    }

    /// Value and all partial derivatives at `x` in one forward pass.
    pub fn eval_dual(&self, x: &[f64]) -> Result<DualNumber, ExprError> {
        self.check_dim(x.len())?;
        let n = x.len().min(MAX_VARS);
        if x.len() > MAX_VARS {
            return Err(ExprError::Dimension {
                needed: MAX_VARS,
                got: x.len(),
            });
        }
        let vars: Vec<DualNumber> = x
            .iter()
            .enumerate()
            .map(|(i, &v)| DualNumber::variable(v, i, n))
            .collect();
        let proto = DualNumber::constant(0.0, n);
        eval_node(&self.root, &vars, &proto).map_err(|op| ExprError::Domain {
            op,
            point: x.to_vec(),
        })
    }

    /// Exact gradient with respect to every coordinate of `x`.
    pub fn grad(&self, x: &[f64]) -> Result<Vec<f64>, ExprError> {
        Ok(self.eval_dual(x)?.partials().to_vec())
    }
}

impl FromStr for Expression {
    type Err = ExprError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Expression::parse(s)
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.root)
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Const(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => {
                write!(f, "(-{:?})", -c)
            }
            Node::Const(c) => write!(f, "{c:?}"),
            Node::Var(i) => write!(f, "x{}", i + 1),
            Node::Neg(a) => write!(f, "(-{a})"),
            Node::Bin(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Node::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

type EvalResult<S> = Result<S, &'static str>;

fn checked<S: Scalar>(v: S, op: &'static str) -> EvalResult<S> {
    if v.value().is_finite() && v.derivatives_finite() {
        Ok(v)
    } else {
        Err(op)
    }
}

fn eval_node<S: Scalar>(node: &Node, vars: &[S], proto: &S) -> EvalResult<S> {
    match node {
        Node::Const(c) => Ok(S::constant(*c, proto)),
        Node::Var(i) => Ok(vars[*i]),
        Node::Neg(a) => Ok(-eval_node(a, vars, proto)?),
        Node::Bin(op, a, b) => {
            let a = eval_node(a, vars, proto)?;
            let b = eval_node(b, vars, proto)?;
            match op {
                BinOp::Add => checked(a + b, "addition"),
                BinOp::Sub => checked(a - b, "subtraction"),
                BinOp::Mul => checked(a * b, "multiplication"),
                BinOp::Div => {
                    if b.value() == 0.0 {
                        return Err("division by zero");
                    }
                    checked(a / b, "division")
                }
                BinOp::Pow => {
                    if a.value() < 0.0 && b.value().fract() != 0.0 {
                        return Err("power of negative base");
                    }
                    if a.value() <= 0.0 && !b.is_constant() {
                        return Err("power with variable exponent and non-positive base");
                    }
                    checked(a.pow(b), "power")
                }
            }
        }
        Node::Call(func, args) => {
            let x = eval_node(&args[0], vars, proto)?;
            match func {
                Func::Exp => checked(x.exp(), "exp"),
                Func::Log => {
                    if x.value() <= 0.0 {
                        return Err("log of non-positive argument");
                    }
                    checked(x.ln(), "log")
                }
                Func::Sqrt => {
                    if x.value() < 0.0 {
                        return Err("sqrt of negative argument");
                    }
                    checked(x.sqrt(), "sqrt")
                }
                Func::Abs => Ok(x.abs()),
                Func::Sign => Ok(x.sign()),
                Func::Sin => checked(x.sin(), "sin"),
                Func::Cos => checked(x.cos(), "cos"),
                Func::Erf => checked(x.erf(), "erf"),
                Func::Atan2 => {
                    let xx = eval_node(&args[1], vars, proto)?;
                    if x.value() == 0.0 && xx.value() == 0.0 {
                        return Err("atan2(0, 0)");
                    }
                    checked(x.atan2(xx), "atan2")
                }
                Func::Min | Func::Max => {
                    let y = eval_node(&args[1], vars, proto)?;
                    let take_first = match func {
                        Func::Min => x.value() <= y.value(),
                        _ => x.value() >= y.value(),
                    };
                    Ok(if take_first { x } else { y })
                }
            }
        }
    }
}
