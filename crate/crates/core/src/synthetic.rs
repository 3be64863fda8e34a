//! Seeded synthetic programs in the dataset wire format.
//!
//! [`corpus`] builds labeled programs whose identifier types follow from
//! local syntax: literal assignments, arithmetic chains in the style of
//! `c = a + b`, builtin conversions, imports, small functions and
//! `for ... in range(...)` loops, plus unlabeled `print(...)` calls.
//! [`random_tree`] builds unlabeled trees of bounded non-block fan-out for
//! transform property tests.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ast::{ClassSet, Dataset, Label, Node, NodeId, Program, DEFAULT_VOCAB_VERSION, MODULE_SCOPE};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSpec {
    pub programs: usize,
    /// Inclusive range of module-level statements per program.
    pub min_statements: usize,
    pub max_statements: usize,
    pub seed: u64,
    pub mix: Mix,
}

/// Which statement forms a corpus draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mix {
    /// Literals, arithmetic, builtin calls, imports, functions, loops and
    /// unlabeled calls.
    #[default]
    Full,
    /// Literal assignments and arithmetic chains only.
    LiteralsAndArithmetic,
}

impl CorpusSpec {
    pub fn new(programs: usize, seed: u64) -> Self {
        CorpusSpec {
            programs,
            min_statements: 8,
            max_statements: 20,
            seed,
            mix: Mix::Full,
        }
    }

    pub fn mix(mut self, mix: Mix) -> Self {
        self.mix = mix;
        self
    }

    pub fn statements(mut self, min: usize, max: usize) -> Self {
        self.min_statements = min;
        self.max_statements = max.max(min);
        self
    }
}

struct Ids(NodeId);

impl Ids {
    fn next(&mut self) -> NodeId {
        self.0 += 1;
        self.0 - 1
    }

    fn node(&mut self, kind: &str, children: Vec<Node>) -> Node {
        Node::new(self.next(), kind, children)
    }

    fn leaf(&mut self, kind: &str) -> Node {
        self.node(kind, vec![])
    }

    fn name(&mut self, ident: &str, ctx: &str) -> Node {
        let id = self.next();
        let ctx = self.leaf(ctx);
        Node::name(id, ident, vec![ctx])
    }
}

/// Variables defined so far in one scope, by class name.
#[derive(Default)]
struct Env {
    vars: Vec<(String, &'static str)>,
}

impl Env {
    fn of_type(&self, ty: &str) -> Vec<&str> {
        self.vars.iter().filter(|(_, t)| *t == ty).map(|(n, _)| n.as_str()).collect()
    }

    fn any(&self) -> Vec<&str> {
        self.vars.iter().map(|(n, _)| n.as_str()).collect()
    }
}

struct Gen<'a> {
    rng: &'a mut ChaCha8Rng,
    ids: Ids,
    counter: usize,
    labels: Vec<(String, String, &'static str)>,
}

const MODULES: &[&str] = &["os", "sys", "math", "re", "json", "time", "random", "string"];

impl Gen<'_> {
    fn fresh(&mut self, prefix: &str) -> String {
        self.counter += 1;
        format!("{prefix}{}", self.counter)
    }

    fn label(&mut self, scope: &str, name: &str, ty: &'static str) {
        self.labels.push((scope.to_string(), name.to_string(), ty));
    }

    fn assign(&mut self, target: &str, value: Node) -> Node {
        let t = self.ids.name(target, "Store");
        self.ids.node("Assign", vec![t, value])
    }

    fn literal(&mut self, ty: &str) -> Node {
        match ty {
            "int" => self.ids.leaf("Num"),
            "float" => self.ids.leaf("Float"),
            "str" => self.ids.leaf("Str"),
            "bool" => self.ids.leaf("Bool"),
            "NoneType" => self.ids.leaf("NoneConst"),
            "bytes" => self.ids.leaf("Bytes"),
            "complex" => self.ids.leaf("Complex"),
            "list" | "tuple" | "set" => {
                let n = self.rng.gen_range(0..=3);
                let elt = ["Num", "Str", "Float"].choose(self.rng).copied().unwrap_or("Num");
                let elts = (0..n).map(|_| self.ids.leaf(elt)).collect();
                let kind = match ty {
                    "list" => "List",
                    "tuple" => "Tuple",
                    _ => "Set",
                };
                self.ids.node(kind, elts)
            }
            "dict" => {
                let n = self.rng.gen_range(0..=2);
                let mut kv = Vec::new();
                for _ in 0..n {
                    kv.push(self.ids.leaf("Str"));
                    kv.push(self.ids.leaf("Num"));
                }
                self.ids.node("Dict", kv)
            }
            other => unreachable!("no literal for {other}"),
        }
    }

    /// `target = <literal>`.
    fn literal_statement(&mut self, scope: &str, env: &mut Env) -> Node {
        const WEIGHTED: &[(&str, u32)] = &[
            ("int", 6),
            ("str", 4),
            ("float", 3),
            ("list", 3),
            ("bool", 2),
            ("dict", 2),
            ("tuple", 2),
            ("NoneType", 1),
            ("set", 1),
            ("bytes", 1),
            ("complex", 1),
        ];
        let ty = WEIGHTED
            .choose_weighted(self.rng, |(_, w)| *w)
            .map(|(t, _)| *t)
            .unwrap_or("int");
        let name = self.fresh("v");
        let value = self.literal(ty);
        self.label(scope, &name, ty);
        env.vars.push((name.clone(), ty));
        self.assign(&name, value)
    }

    fn operand(&mut self, pool: &[&str], literal: &str) -> Node {
        match pool.choose(self.rng) {
            Some(n) if self.rng.gen_bool(0.7) => {
                let n = n.to_string();
                self.ids.name(&n, "Load")
            }
            _ => self.ids.leaf(literal),
        }
    }

    /// Arithmetic over earlier variables; the result type follows the
    /// operands and the chain always holds one literal of that type.
    fn arithmetic_statement(&mut self, scope: &str, env: &mut Env) -> Option<Node> {
        let ty: &'static str = *["int", "int", "float", "str"].choose(self.rng)?;
        let pool: Vec<String> = env.of_type(ty).into_iter().map(String::from).collect();
        if pool.is_empty() {
            return None;
        }
        let pool: Vec<&str> = pool.iter().map(String::as_str).collect();
        let literal = match ty {
            "int" => "Num",
            "float" => "Float",
            _ => "Str",
        };
        let ops: &[&str] = match ty {
            "str" => &["Add"],
            "float" => &["Add", "Sub", "Mult", "Div"],
            _ => &["Add", "Sub", "Mult"],
        };
        let mut expr = {
            let name = pool.choose(self.rng)?.to_string();
            self.ids.name(&name, "Load")
        };
        let terms = self.rng.gen_range(1..=2);
        for i in 0..terms {
            let op = *ops.choose(self.rng)?;
            // Sinks carry no per-name information, so without a literal an
            // all-name chain would look the same for every type.
            let rhs = if i == 0 {
                self.ids.leaf(literal)
            } else {
                self.operand(&pool, literal)
            };
            expr = self.ids.node(op, vec![expr, rhs]);
        }
        let name = self.fresh("v");
        self.label(scope, &name, ty);
        env.vars.push((name.clone(), ty));
        Some(self.assign(&name, expr))
    }

    /// `target = builtin(arg)` for a builtin whose result type is fixed.
    fn builtin_statement(&mut self, scope: &str, env: &mut Env) -> Option<Node> {
        const CALLS: &[(&str, &str, &[&str])] = &[
            ("len", "int", &["list", "str", "dict", "tuple", "set"]),
            ("str", "str", &["int", "float"]),
            ("int", "int", &["str", "float"]),
            ("float", "float", &["int", "str"]),
            ("range", "range", &["int"]),
            ("list", "list", &["range", "tuple", "str", "set"]),
            ("tuple", "tuple", &["list", "range"]),
            ("set", "set", &["list", "tuple"]),
            ("dict", "dict", &[]),
        ];
        let (func, ret, args) = *CALLS.choose(self.rng)?;
        let arg_pool: Vec<String> = args
            .iter()
            .flat_map(|t| env.of_type(t))
            .map(String::from)
            .collect();
        let mut call_children = vec![self.ids.leaf(func)];
        if !args.is_empty() {
            let arg = arg_pool.choose(self.rng)?.clone();
            call_children.push(self.ids.name(&arg, "Load"));
        }
        let call = self.ids.node("Call", call_children);
        let name = self.fresh("v");
        let ret: &'static str = match ret {
            "int" => "int",
            "str" => "str",
            "float" => "float",
            "range" => "range",
            "list" => "list",
            "tuple" => "tuple",
            "set" => "set",
            _ => "dict",
        };
        self.label(scope, &name, ret);
        env.vars.push((name.clone(), ret));
        Some(self.assign(&name, call))
    }

    fn import_statement(&mut self, env: &mut Env) -> Option<Node> {
        let taken: Vec<&str> = env.of_type("module");
        let free: Vec<&str> = MODULES.iter().copied().filter(|m| !taken.contains(m)).collect();
        let module = free.choose(self.rng)?.to_string();
        let target = self.ids.name(&module, "Store");
        let alias = self.ids.node("alias", vec![target]);
        self.label(MODULE_SCOPE, &module, "module");
        env.vars.push((module, "module"));
        Some(self.ids.node("Import", vec![alias]))
    }

    /// `def f(p): q = p <op> <lit>; return q`.
    fn function_statement(&mut self, env: &mut Env) -> Node {
        let fname = self.fresh("f");
        let scope = format!("{MODULE_SCOPE}::{fname}");
        let (ty, literal): (&'static str, &str) = if self.rng.gen_bool(0.6) {
            ("int", "Num")
        } else {
            ("float", "Float")
        };
        let param = self.fresh("p");
        let local = self.fresh("q");
        let head = self.ids.name(&fname, "Store");
        let p = self.ids.name(&param, "Param");
        let arg = self.ids.node("arg", vec![p]);
        let arguments = self.ids.node("arguments", vec![arg]);
        let lhs = self.ids.name(&param, "Load");
        let rhs = self.ids.leaf(literal);
        let op = *["Add", "Mult", "Sub"].choose(self.rng).unwrap_or(&"Add");
        let expr = self.ids.node(op, vec![lhs, rhs]);
        let body_assign = self.assign(&local, expr);
        let ret_val = self.ids.name(&local, "Load");
        let ret = self.ids.node("Return", vec![ret_val]);
        let body = self.ids.node("body", vec![body_assign, ret]);
        self.label(MODULE_SCOPE, &fname, "function");
        self.label(&scope, &param, ty);
        self.label(&scope, &local, ty);
        env.vars.push((fname.clone(), "function"));
        self.ids.node("FunctionDef", vec![head, arguments, body])
    }

    /// `for i in range(n): acc = acc + i` over an existing int `acc`.
    fn loop_statement(&mut self, scope: &str, env: &mut Env) -> Option<Node> {
        let ints: Vec<String> = env.of_type("int").into_iter().map(String::from).collect();
        let acc = ints.choose(self.rng)?.clone();
        let var = self.fresh("i");
        let target = self.ids.name(&var, "Store");
        let range = self.ids.leaf("range");
        let bound = self.ids.leaf("Num");
        let iter = self.ids.node("Call", vec![range, bound]);
        let lhs = self.ids.name(&acc, "Load");
        let rhs = self.ids.name(&var, "Load");
        let sum = self.ids.node("Add", vec![lhs, rhs]);
        let update = self.assign(&acc, sum);
        let body = self.ids.node("body", vec![update]);
        self.label(scope, &var, "int");
        env.vars.push((var, "int"));
        Some(self.ids.node("For", vec![target, iter, body]))
    }

    /// `print(x)`: `print` itself is an unlabeled identifier.
    fn print_statement(&mut self, env: &Env) -> Option<Node> {
        let arg = env.any().choose(self.rng)?.to_string();
        let func = self.ids.name("print", "Load");
        let arg = self.ids.name(&arg, "Load");
        let call = self.ids.node("Call", vec![func, arg]);
        Some(self.ids.node("Expr", vec![call]))
    }

    fn statement(&mut self, env: &mut Env, mix: Mix) -> Node {
        loop {
            let roll = match mix {
                Mix::Full => self.rng.gen_range(0..100),
                Mix::LiteralsAndArithmetic => self.rng.gen_range(0..55),
            };
            let stmt = match roll {
                0..=34 => Some(self.literal_statement(MODULE_SCOPE, env)),
                35..=54 => self.arithmetic_statement(MODULE_SCOPE, env),
                55..=69 => self.builtin_statement(MODULE_SCOPE, env),
                70..=75 => self.import_statement(env),
                76..=85 => Some(self.function_statement(env)),
                86..=92 => self.loop_statement(MODULE_SCOPE, env),
                _ => self.print_statement(env),
            };
            if let Some(s) = stmt {
                return s;
            }
        }
    }
}

/// One labeled program with `statements` module-level statements.
pub fn program(rng: &mut ChaCha8Rng, path: &str, statements: usize, mix: Mix, classes: &ClassSet) -> Program {
    let mut gen = Gen {
        rng,
        ids: Ids(1),
        counter: 0,
        labels: Vec::new(),
    };
    let mut env = Env::default();
    let body: Vec<Node> = (0..statements).map(|_| gen.statement(&mut env, mix)).collect();
    let root = Node::new(0, "Module", body);
    let labels = gen
        .labels
        .into_iter()
        .map(|(scope, name, ty)| Label {
            scope,
            name,
            class: classes.index_of(ty).expect("synthetic types are builtin classes"),
        })
        .collect();
    Program {
        path: path.to_string(),
        root,
        labels,
    }
}

/// A seeded corpus with the bundled class set and vocabulary version.
pub fn corpus(spec: &CorpusSpec) -> Dataset {
    let classes = ClassSet::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let programs = (0..spec.programs)
        .map(|i| {
            let n = rng.gen_range(spec.min_statements..=spec.max_statements);
            program(&mut rng, &format!("synthetic_{i:03}.py"), n, spec.mix, &classes)
        })
        .collect();
    Dataset::new(classes, DEFAULT_VOCAB_VERSION, programs)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeSpec {
    /// Maximum statements per block.
    pub max_block: usize,
    /// Maximum block nesting depth.
    pub max_depth: usize,
}

impl Default for TreeSpec {
    fn default() -> Self {
        TreeSpec {
            max_block: 30,
            max_depth: 3,
        }
    }
}

/// A random module whose non-block nodes have at most two children, so it
/// can be restructured for every `K >= 2`. Identifiers come from a small
/// pool to produce repeated occurrences and shadowing function locals.
pub fn random_tree(rng: &mut impl Rng, spec: &TreeSpec) -> Node {
    let mut ids = Ids(1);
    let n = rng.gen_range(0..=spec.max_block);
    let body = (0..n).map(|_| random_statement(rng, &mut ids, spec, 0)).collect();
    Node::new(0, "Module", body)
}

const POOL: &[&str] = &["a", "b", "c", "d", "e"];

fn random_expr(rng: &mut impl Rng, ids: &mut Ids, depth: usize) -> Node {
    match rng.gen_range(0..if depth >= 3 { 2 } else { 5 }) {
        0 => {
            let name = POOL[rng.gen_range(0..POOL.len())];
            ids.name(name, "Load")
        }
        1 => ids.leaf(["Num", "Str", "Float"][rng.gen_range(0..3)]),
        2 => {
            let l = random_expr(rng, ids, depth + 1);
            let r = random_expr(rng, ids, depth + 1);
            ids.node(["Add", "Mult", "Sub"][rng.gen_range(0..3)], vec![l, r])
        }
        3 => {
            let f = ids.leaf("len");
            let a = random_expr(rng, ids, depth + 1);
            ids.node("Call", vec![f, a])
        }
        _ => {
            let name = POOL[rng.gen_range(0..POOL.len())];
            let v = ids.name(name, "Load");
            ids.node("Attribute", vec![v])
        }
    }
}

fn random_block(rng: &mut impl Rng, ids: &mut Ids, spec: &TreeSpec, depth: usize) -> Node {
    let id = ids.next();
    let n = rng.gen_range(1..=spec.max_block.max(1));
    let stmts = (0..n).map(|_| random_statement(rng, ids, spec, depth + 1)).collect();
    Node::new(id, "body", stmts)
}

fn random_statement(rng: &mut impl Rng, ids: &mut Ids, spec: &TreeSpec, depth: usize) -> Node {
    let nested = depth < spec.max_depth;
    match rng.gen_range(0..if nested { 6 } else { 3 }) {
        0 | 1 => {
            let name = POOL[rng.gen_range(0..POOL.len())];
            let t = ids.name(name, "Store");
            let v = random_expr(rng, ids, 0);
            ids.node("Assign", vec![t, v])
        }
        2 => {
            let e = random_expr(rng, ids, 0);
            ids.node("Expr", vec![e])
        }
        3 => {
            let test = random_expr(rng, ids, 1);
            let body = random_block(rng, ids, spec, depth);
            ids.node(if rng.gen_bool(0.5) { "If" } else { "While" }, vec![test, body])
        }
        4 => {
            let fname = ["f", "g", "h"][rng.gen_range(0..3)];
            let head = ids.name(fname, "Store");
            let body = random_block(rng, ids, spec, depth);
            ids.node("FunctionDef", vec![head, body])
        }
        _ => ids.leaf("Pass"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::parse_dataset;

    #[test]
    fn corpus_validates_and_round_trips() {
        let ds = corpus(&CorpusSpec::new(10, 3));
        ds.validate().unwrap();
        assert!(ds.label_count() > 50);
        let back = parse_dataset(ds.to_json().as_bytes()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn corpus_is_seeded() {
        let a = corpus(&CorpusSpec::new(5, 11));
        let b = corpus(&CorpusSpec::new(5, 11));
        let c = corpus(&CorpusSpec::new(5, 12));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn random_trees_have_small_non_block_fan_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let t = random_tree(&mut rng, &TreeSpec::default());
            assert!(crate::ast::validate_tree(&t).is_empty());
            t.walk(&mut |n| {
                if !crate::transforms::is_block(&n.kind) {
                    assert!(n.children.len() <= 2, "{}", n.kind);
                }
            });
        }
    }
}
