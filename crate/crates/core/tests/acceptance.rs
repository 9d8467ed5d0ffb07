//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Every expected value here comes from an oracle written in this file,
//! independent of the library code it checks.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use holon_core::collaboration::{select_mediator, MediatorPolicy, CRITERIA};
use holon_core::crypto::CryptoProvider;
use holon_core::dsl::{self, AggOp, CmpOp, EvalContext, Expr, LoggedEvent, Path, RoleView, TemporalOp};
use holon_core::hcfw::{merged_record, ChangeKind, CompositionRecord, FormationRequest, Hcfw, Outcome, VotingConfig};
use holon_core::holon::{HolonDescriptor, HolonId, HolonRegistry};
use holon_core::runtime::{RunOptions, RunReport, World};
use holon_core::scenario::{self, Scenario};
use holon_core::simnet::{NetConfig, SimNet};
use holon_core::trace::{TraceEvent, TraceKind};
use holon_core::value::Value;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criterion 1 wall-clock budget.
const SWEEP_BUDGET: Duration = Duration::from_secs(5);
/// Criterion 2 minimum sequence length.
const CHURN_OPS: usize = 200;
/// Criterion 3 random expression count.
const RANDOM_EXPRS: usize = 1_000;
const BUNDLED: [&str; 6] = ["sar", "wildfire", "missing-person", "stranded", "landslide", "search-suspend"];
const ASSERTED: [&str; 5] = ["wildfire", "missing-person", "stranded", "landslide", "search-suspend"];

type Verdict = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// A trusted entity, certified holons `H0..Hn` and a network connecting them.
fn protocol(n: usize) -> (Hcfw, HolonRegistry, Vec<HolonId>) {
    let mut hcfw = Hcfw::with_ledger("TE");
    let mut reg = HolonRegistry::new();
    let mut net: SimNet<()> = SimNet::new(0, NetConfig::default());
    net.add_node("TE");
    let holons: Vec<HolonId> = (0..n).map(|i| HolonId::new(format!("H{i}"))).collect();
    for h in &holons {
        reg.register(&HolonDescriptor::new(h.clone())).unwrap();
        net.add_node(h.as_str());
        hcfw.initialize(&net, h).unwrap();
    }
    (hcfw, reg, holons)
}

/// Holders of every secret that has any, mapped from the secret.
fn audit(hcfw: &Hcfw) -> Result<(), String> {
    for rec in hcfw.compositions() {
        let holders = hcfw.crypto().holders(rec.composition_secret);
        ensure(holders == rec.members, || {
            format!("{}: holders {:?} != members {:?}", rec.composition_id, holders, rec.members)
        })?;
    }
    Ok(())
}

/// Non-members must fail to open a fresh envelope; members must succeed.
fn confinement(hcfw: &Hcfw, everyone: &[HolonId]) -> Result<(), String> {
    for rec in hcfw.compositions() {
        let sealed = hcfw.crypto().seal(rec.composition_secret, b"post-change envelope");
        for h in everyone {
            let opened = hcfw.crypto().unseal(h, &sealed).is_some();
            ensure(opened == rec.members.contains(h), || {
                format!("{h} unseal={opened} on {} (member={})", rec.composition_id, rec.members.contains(h))
            })?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- criterion 1

fn criterion_1() -> Verdict {
    let start = Instant::now();
    // Thresholds as exact fractions for the oracle.
    let thresholds = [(0.5, 1u32, 2u32), (0.75, 3, 4), (1.0, 1, 1)];
    let mut cases = 0;
    for &(t, num, den) in &thresholds {
        for pattern in 0u32..16 {
            let (mut hcfw, mut reg, holons) = protocol(4);
            let yes: BTreeSet<HolonId> = holons.iter().enumerate().filter(|(i, _)| pattern >> i & 1 == 1).map(|(_, h)| h.clone()).collect();
            let expected = yes.len() as u32 * den >= num * 4;
            let voting = VotingConfig { formation_threshold: t, ..VotingConfig::default() };
            let request = FormationRequest::new(holons[0].clone(), holons.clone()).named("S").with_voting(voting);
            let pid = hcfw.propose_composition(&reg, 0, request).map_err(|e| e.to_string())?;
            let secret = hcfw.proposal(&pid).and_then(|p| p.secret).ok_or("formation proposal without secret")?;
            let outcome = hcfw.decide(&mut reg, 0, &pid, |h| Some(yes.contains(h))).map_err(|e| e.to_string())?;
            match outcome {
                Outcome::Formed(rec) => {
                    ensure(expected, || format!("pattern {pattern:04b} t={t}: formed, oracle rejects"))?;
                    ensure(rec.members == yes, || format!("pattern {pattern:04b} t={t}: members {:?}", rec.members))?;
                }
                Outcome::Rejected { .. } => {
                    ensure(!expected, || format!("pattern {pattern:04b} t={t}: rejected, oracle forms"))?;
                    ensure(hcfw.crypto().holders(secret).is_empty(), || format!("pattern {pattern:04b} t={t}: rejected secret still held"))?;
                    ensure(hcfw.compositions().next().is_none(), || "rejected proposal left a composition".into())?;
                }
                other => return Err(format!("unexpected outcome {other:?}")),
            }
            audit(&hcfw)?;
            confinement(&hcfw, &holons)?;
            cases += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < SWEEP_BUDGET, || format!("sweep took {elapsed:?}, budget {SWEEP_BUDGET:?}"))?;
    Ok(format!("{cases} vote patterns x thresholds agree with the threshold oracle, holders = members, {elapsed:.2?} < {SWEEP_BUDGET:?}"))
}

// ---------------------------------------------------------------- criterion 2

fn churn(seed: u64, ops: usize) -> Result<(usize, usize, usize), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut hcfw, mut reg, holons) = protocol(8);
    let vote = |rng: &mut ChaCha8Rng| -> Option<bool> {
        match rng.gen_range(0..20) {
            0 => None,
            1..=3 => Some(false),
            _ => Some(true),
        }
    };
    for name in ["A", "B"] {
        let mut members: Vec<HolonId> = holons.choose_multiple(&mut rng, 3).cloned().collect();
        members.sort();
        let request = FormationRequest::new(members[0].clone(), members.clone()).named(name);
        let pid = hcfw.propose_composition(&reg, 0, request).map_err(|e| e.to_string())?;
        hcfw.decide(&mut reg, 0, &pid, |_| Some(true)).map_err(|e| e.to_string())?;
    }
    let (mut adds, mut removes, mut merges) = (0, 0, 0);
    for step in 0..ops {
        let now = step as u64 + 1;
        let comps: Vec<CompositionRecord> = hcfw.compositions().cloned().collect();
        let target = comps.choose(&mut rng).expect("compositions exist").clone();
        let votes: BTreeMap<HolonId, Option<bool>> = holons.iter().map(|h| (h.clone(), vote(&mut rng))).collect();
        let cast = |h: &HolonId| votes[h];
        match rng.gen_range(0..10) {
            0..=3 => {
                let outsiders: Vec<&HolonId> = holons.iter().filter(|h| !target.members.contains(*h)).collect();
                let Some(h) = outsiders.choose(&mut rng).map(|h| (*h).clone()) else { continue };
                let accepted = hcfw.member_change(&mut reg, now, &target.composition_id, &h, ChangeKind::Add, cast).map_err(|e| e.to_string())?;
                let after = &hcfw.composition(&target.composition_id).unwrap().members;
                ensure(after.contains(&h) == accepted, || format!("step {step}: add {h} accepted={accepted} but members {after:?}"))?;
                adds += 1;
            }
            4..=7 => {
                if target.members.len() < 2 {
                    continue;
                }
                let members: Vec<&HolonId> = target.members.iter().collect();
                let h = (*members.choose(&mut rng).unwrap()).clone();
                let accepted = hcfw.member_change(&mut reg, now, &target.composition_id, &h, ChangeKind::Remove, cast).map_err(|e| e.to_string())?;
                let rec = hcfw.composition(&target.composition_id).unwrap();
                ensure(rec.members.contains(&h) != accepted, || format!("step {step}: remove {h} accepted={accepted}"))?;
                if accepted {
                    ensure(rec.composition_secret != target.composition_secret, || format!("step {step}: secret not rotated"))?;
                    let sealed = hcfw.crypto().seal(rec.composition_secret, b"after removal");
                    ensure(hcfw.crypto().unseal(&h, &sealed).is_none(), || format!("step {step}: removed {h} unsealed"))?;
                }
                removes += 1;
            }
            _ => {
                let Some(other) = comps.iter().filter(|c| c.composition_id != target.composition_id).collect::<Vec<_>>().choose(&mut rng).cloned().cloned() else {
                    continue;
                };
                if let Ok(rec) = hcfw.merge_compositions(&mut reg, now, &target.composition_id, &other.composition_id, cast) {
                    let union: BTreeSet<HolonId> = target.members.union(&other.members).cloned().collect();
                    ensure(rec.members == union, || format!("step {step}: merged members {:?}", rec.members))?;
                }
                merges += 1;
            }
        }
        audit(&hcfw).map_err(|e| format!("step {step}: {e}"))?;
        confinement(&hcfw, &holons).map_err(|e| format!("step {step}: {e}"))?;
    }
    Ok((adds, removes, merges))
}

fn criterion_2(seeds: &[u64]) -> Verdict {
    let mut totals = (0, 0, 0);
    for &seed in seeds {
        let (a, r, m) = churn(seed, CHURN_OPS + 50).map_err(|e| format!("seed {seed}: {e}"))?;
        totals = (totals.0 + a, totals.1 + r, totals.2 + m);
    }
    ensure(totals.0 > 0 && totals.1 > 0 && totals.2 > 0, || format!("degenerate operation mix {totals:?}"))?;
    Ok(format!(
        "{} seeds x {} ops ({} adds, {} removes, {} merges): 0 violations",
        seeds.len(),
        CHURN_OPS + 50,
        totals.0,
        totals.1,
        totals.2
    ))
}

// ---------------------------------------------------------------- criterion 3

const ATOMS: [&str; 4] = ["a", "b", "c", "d"];

/// A tree with its oracle truth table over the 16 atom assignments.
struct Tabled {
    expr: Box<Expr>,
    mask: u16,
}

fn atom_mask(i: usize) -> u16 {
    (0..16u16).filter(|m| m >> i & 1 == 1).fold(0, |acc, m| acc | 1 << m)
}

/// All trees of nesting depth <= `depth` (atoms have depth 0).
fn trees(depth: usize) -> Vec<Tabled> {
    let atoms = || ATOMS.iter().enumerate().map(|(i, a)| Tabled { expr: Box::new(Expr::path(a)), mask: atom_mask(i) });
    let mut level: Vec<Tabled> = atoms().collect();
    for _ in 0..depth {
        let mut next: Vec<Tabled> = atoms().collect();
        for x in &level {
            next.push(Tabled { expr: Box::new(Expr::Not(x.expr.clone())), mask: !x.mask });
        }
        for x in &level {
            for y in &level {
                next.push(Tabled { expr: Box::new(Expr::And(x.expr.clone(), y.expr.clone())), mask: x.mask & y.mask });
                next.push(Tabled { expr: Box::new(Expr::Or(x.expr.clone(), y.expr.clone())), mask: x.mask | y.mask });
            }
        }
        level = next;
    }
    level
}

fn assignment_contexts() -> Vec<EvalContext> {
    (0..16u16)
        .map(|m| {
            let mut ctx = EvalContext::default();
            for (i, a) in ATOMS.iter().enumerate() {
                ctx.shared.insert(a.to_string(), Value::Bool(m >> i & 1 == 1));
            }
            ctx
        })
        .collect()
}

fn library_mask(e: &Expr, ctxs: &[EvalContext]) -> u16 {
    ctxs.iter().enumerate().fold(0, |acc, (m, c)| if dsl::holds(e, c) { acc | 1 << m } else { acc })
}

/// Every depth <= 3 tree is an atom, `not` of a depth <= 2 tree, or a binary
/// node over two of them. Binary roots are built by swapping children in and
/// out of one reusable node. Returns the number of distinct trees checked.
fn exhaustive_truth_tables() -> Result<u64, String> {
    let ctxs = assignment_contexts();
    let mut level2 = trees(2);
    let mut checked = ATOMS.len() as u64;
    for t in &level2 {
        ensure(library_mask(&t.expr, &ctxs) == t.mask, || format!("`{}` disagrees", t.expr))?;
    }
    for t in &level2 {
        let e = Expr::Not(t.expr.clone());
        ensure(library_mask(&e, &ctxs) == !t.mask, || format!("`{e}` disagrees"))?;
        checked += 1;
    }
    let mut right: Vec<Tabled> = trees(2);
    for op in [true, false] {
        let mut node = if op {
            Expr::And(Box::new(Expr::lit(true)), Box::new(Expr::lit(true)))
        } else {
            Expr::Or(Box::new(Expr::lit(true)), Box::new(Expr::lit(true)))
        };
        for x in level2.iter_mut() {
            swap_child(&mut node, true, &mut x.expr);
            for y in right.iter_mut() {
                swap_child(&mut node, false, &mut y.expr);
                let expected = if op { x.mask & y.mask } else { x.mask | y.mask };
                let got = library_mask(&node, &ctxs);
                swap_child(&mut node, false, &mut y.expr);
                if got != expected {
                    return Err(format!("depth-3 tree `{node}` disagrees: {got:016b} vs {expected:016b}"));
                }
                checked += 1;
            }
            swap_child(&mut node, true, &mut x.expr);
        }
    }
    Ok(checked)
}

fn swap_child(node: &mut Expr, left: bool, with: &mut Box<Expr>) {
    match node {
        Expr::And(l, r) | Expr::Or(l, r) => std::mem::swap(if left { l } else { r }, with),
        _ => unreachable!(),
    }
}

/// Independent value model: decimals are exact rationals.
#[derive(Debug, Clone, PartialEq)]
enum Ov {
    Null,
    Bool(bool),
    Int(i64),
    Rat(i64, i64),
    Str(String),
}

impl Ov {
    fn truthy(&self) -> bool {
        *self == Ov::Bool(true)
    }
}

fn ov_of(v: &Value) -> Ov {
    match v {
        Value::Null => Ov::Null,
        Value::Bool(b) => Ov::Bool(*b),
        Value::Int(i) => Ov::Int(*i),
        Value::Decimal(d) => Ov::Rat((d * 10.0).round() as i64, 10),
        Value::Str(s) => Ov::Str(s.clone()),
        Value::Location(_) => unreachable!("not generated"),
    }
}

fn ov_cmp(l: &Ov, r: &Ov) -> Option<std::cmp::Ordering> {
    match (l, r) {
        (Ov::Int(a), Ov::Int(b)) => Some(a.cmp(b)),
        (Ov::Rat(a, da), Ov::Rat(b, db)) => Some((*a as i128 * *db as i128).cmp(&(*b as i128 * *da as i128))),
        (Ov::Str(a), Ov::Str(b)) => Some(a.cmp(b)),
        _ => None,
    }
}

fn ov_eq(l: &Ov, r: &Ov) -> Option<bool> {
    match (l, r) {
        (Ov::Bool(a), Ov::Bool(b)) => Some(a == b),
        (Ov::Null, _) | (_, Ov::Null) => None,
        _ => ov_cmp(l, r).map(|o| o == std::cmp::Ordering::Equal),
    }
}

/// Inputs of one random evaluation, in the oracle's own representation.
struct World3 {
    vars: BTreeMap<String, Value>,
    members: Vec<BTreeMap<String, Value>>,
    caps: BTreeMap<String, BTreeSet<String>>,
    log: Vec<(String, u64)>,
}

impl World3 {
    fn context(&self) -> EvalContext {
        let mut ctx = EvalContext { shared: self.vars.clone(), now: 30, ..EvalContext::default() };
        ctx.collections.insert("members".into(), self.members.clone());
        ctx.holon_capabilities = self.caps.clone();
        ctx.bindings.insert(
            "crew".into(),
            RoleView { holon: "H1".into(), resource: "r".into(), capabilities: self.caps["H1"].clone(), ..RoleView::default() },
        );
        ctx.events = self.log.iter().map(|(k, t)| LoggedEvent { kind: k.clone(), at: *t }).collect();
        ctx
    }

    fn field(&self, f: &str) -> Vec<Ov> {
        self.members.iter().filter_map(|m| m.get(f)).map(ov_of).filter(|v| *v != Ov::Null).collect()
    }

    fn last(&self, kind: &str) -> Option<u64> {
        self.log.iter().filter(|(k, _)| k == kind).map(|(_, t)| *t).max()
    }

    fn eval(&self, e: &Expr) -> Ov {
        match e {
            Expr::Literal(v) => ov_of(v),
            Expr::Path(p) => self.vars.get(&p.dotted()).map(ov_of).unwrap_or(Ov::Null),
            Expr::Not(x) => Ov::Bool(!self.eval(x).truthy()),
            Expr::And(l, r) => Ov::Bool(self.eval(l).truthy() && self.eval(r).truthy()),
            Expr::Or(l, r) => Ov::Bool(self.eval(l).truthy() || self.eval(r).truthy()),
            Expr::Cmp(CmpOp::In, l, r) => {
                let needle = self.eval(l);
                let Expr::List(items) = r.as_ref() else { return Ov::Bool(false) };
                Ov::Bool(items.iter().any(|i| ov_eq(&needle, &ov_of(i)) == Some(true)))
            }
            Expr::Cmp(op, l, r) => {
                use std::cmp::Ordering::*;
                let (l, r) = (self.eval(l), self.eval(r));
                let o = ov_cmp(&l, &r);
                Ov::Bool(match op {
                    CmpOp::Is | CmpOp::Eq => ov_eq(&l, &r) == Some(true),
                    CmpOp::Ne => ov_eq(&l, &r) == Some(false),
                    CmpOp::Lt => o == Some(Less),
                    CmpOp::Le => matches!(o, Some(Less | Equal)),
                    CmpOp::Gt => o == Some(Greater),
                    CmpOp::Ge => matches!(o, Some(Greater | Equal)),
                    CmpOp::In => unreachable!(),
                })
            }
            Expr::Has(p, cap) => {
                // `crew` is bound to a resource of H1.
                let holder = if p.head() == "crew" { "H1" } else { p.head() };
                Ov::Bool(self.caps.get(holder).is_some_and(|c| c.contains(cap)))
            }
            Expr::Temporal(op, a, b) => {
                let Expr::Event(a) = a.as_ref() else { return Ov::Bool(false) };
                Ov::Bool(match (op, b.as_ref()) {
                    (TemporalOp::Before, Expr::Event(b)) => matches!((self.last(a), self.last(b)), (Some(x), Some(y)) if x < y),
                    (TemporalOp::After, Expr::Event(b)) => matches!((self.last(a), self.last(b)), (Some(x), Some(y)) if x > y),
                    (TemporalOp::During, Expr::Interval(s, t)) => self.log.iter().any(|(k, at)| k == a && s <= at && at <= t),
                    _ => false,
                })
            }
            Expr::Agg { op, field, .. } => {
                let vals = field.as_deref().map(|f| self.field(f));
                match op {
                    AggOp::Count => Ov::Int(vals.map_or(self.members.len(), |v| v.len()) as i64),
                    AggOp::Sum | AggOp::Average => {
                        let vals = vals.unwrap_or_default();
                        let any_rat = vals.iter().any(|v| matches!(v, Ov::Rat(..)));
                        // Everything in tenths.
                        let tenths: i64 = vals
                            .iter()
                            .map(|v| match v {
                                Ov::Int(i) => i * 10,
                                Ov::Rat(n, d) => n * (10 / d),
                                _ => 0,
                            })
                            .sum();
                        let numeric = vals.iter().filter(|v| matches!(v, Ov::Int(_) | Ov::Rat(..))).count() as i64;
                        match op {
                            AggOp::Sum if any_rat => Ov::Rat(tenths, 10),
                            AggOp::Sum => Ov::Int(tenths / 10),
                            _ if numeric == 0 => Ov::Null,
                            _ => Ov::Rat(tenths, 10 * numeric),
                        }
                    }
                }
            }
            Expr::List(_) | Expr::Interval(..) | Expr::Event(_) => Ov::Null,
        }
    }
}

const KINDS: [&str; 3] = ["SOS", "alarm", "comeback"];
const WORDS: [&str; 4] = ["wildfire", "rescue", "missing person", "landslide"];

fn gen_world(rng: &mut ChaCha8Rng) -> World3 {
    let mut vars = BTreeMap::new();
    for b in ["b0", "b1", "b2"] {
        if rng.gen_bool(0.85) {
            vars.insert(b.to_string(), Value::Bool(rng.gen()));
        }
    }
    for i in ["i0", "i1"] {
        vars.insert(i.to_string(), Value::Int(rng.gen_range(-4..=4)));
    }
    vars.insert("d0".into(), Value::Decimal(rng.gen_range(-20..=20) as f64 / 10.0));
    for s in ["s0", "sos.type"] {
        if rng.gen_bool(0.85) {
            vars.insert(s.to_string(), Value::str(*WORDS.choose(rng).unwrap()));
        }
    }
    let members = (0..rng.gen_range(0..=4))
        .map(|_| {
            let mut m = BTreeMap::new();
            if rng.gen_bool(0.8) {
                m.insert("battery".to_string(), Value::Decimal(rng.gen_range(0..=10) as f64 / 10.0));
            }
            m.insert("load".to_string(), Value::Int(rng.gen_range(0..=5)));
            m
        })
        .collect();
    let all = ["pump", "relay", "airlift"];
    let caps = ["H1", "H2"]
        .iter()
        .map(|h| (h.to_string(), all.iter().filter(|_| rng.gen_bool(0.5)).map(|c| c.to_string()).collect()))
        .collect();
    let mut log: Vec<(String, u64)> =
        (0..rng.gen_range(0..=10)).map(|_| (KINDS.choose(rng).unwrap().to_string(), rng.gen_range(0..=20))).collect();
    log.sort_by_key(|(_, t)| *t);
    World3 { vars, members, caps, log }
}

fn int_term(rng: &mut ChaCha8Rng) -> Expr {
    match rng.gen_range(0..5) {
        0 => Expr::path("i0"),
        1 => Expr::path("i1"),
        2 => Expr::Agg { op: AggOp::Count, selector: "members".into(), field: None },
        3 => Expr::Agg { op: AggOp::Sum, selector: "members".into(), field: Some("load".into()) },
        _ => Expr::lit(Value::Int(rng.gen_range(-4..=6))),
    }
}

fn dec_term(rng: &mut ChaCha8Rng) -> Expr {
    match rng.gen_range(0..4) {
        0 => Expr::path("d0"),
        1 => Expr::Agg { op: AggOp::Average, selector: "members".into(), field: Some("battery".into()) },
        2 => Expr::Agg { op: AggOp::Sum, selector: "members".into(), field: Some("battery".into()) },
        _ => Expr::lit(Value::Decimal(rng.gen_range(-20..=20) as f64 / 10.0)),
    }
}

fn str_term(rng: &mut ChaCha8Rng) -> Expr {
    match rng.gen_range(0..4) {
        0 => Expr::path("s0"),
        1 => Expr::path("sos.type"),
        2 => Expr::path("unset"),
        _ => Expr::lit(Value::str(*WORDS.choose(rng).unwrap())),
    }
}

fn any_op(rng: &mut ChaCha8Rng) -> CmpOp {
    *[CmpOp::Gt, CmpOp::Lt, CmpOp::Ge, CmpOp::Le, CmpOp::Eq, CmpOp::Ne, CmpOp::Is].choose(rng).unwrap()
}

fn gen_bool(rng: &mut ChaCha8Rng, depth: u32) -> Expr {
    let leaf = depth == 0 || rng.gen_bool(0.3);
    if !leaf {
        return match rng.gen_range(0..3) {
            0 => Expr::not(gen_bool(rng, depth - 1)),
            1 => Expr::and(gen_bool(rng, depth - 1), gen_bool(rng, depth - 1)),
            _ => Expr::or(gen_bool(rng, depth - 1), gen_bool(rng, depth - 1)),
        };
    }
    match rng.gen_range(0..10) {
        0 => Expr::path(["b0", "b1", "b2"].choose(rng).unwrap()),
        1 => Expr::lit(rng.gen::<bool>()),
        2 => Expr::cmp(any_op(rng), int_term(rng), int_term(rng)),
        3 => Expr::cmp(any_op(rng), dec_term(rng), dec_term(rng)),
        4 => Expr::cmp(any_op(rng), str_term(rng), str_term(rng)),
        5 => {
            let n = rng.gen_range(1..=3);
            let items = WORDS.choose_multiple(rng, n).map(|w| Value::str(*w)).collect();
            Expr::cmp(CmpOp::In, str_term(rng), Expr::List(items))
        }
        6 => Expr::Has(Path::parse(["H1", "H2", "crew"].choose(rng).unwrap()), ["pump", "relay", "airlift"].choose(rng).unwrap().to_string()),
        7 | 8 => {
            let a = Expr::Event(KINDS.choose(rng).unwrap().to_string());
            let op = *[TemporalOp::Before, TemporalOp::After, TemporalOp::During].choose(rng).unwrap();
            let b = if op == TemporalOp::During {
                let s = rng.gen_range(0..=20);
                Expr::Interval(s, s + rng.gen_range(0..=6))
            } else {
                Expr::Event(KINDS.choose(rng).unwrap().to_string())
            };
            Expr::temporal(op, a, b)
        }
        _ => Expr::cmp(any_op(rng), Expr::path("b0"), Expr::lit(rng.gen::<bool>())),
    }
}

fn criterion_3() -> Verdict {
    let start = Instant::now();
    let exhaustive = exhaustive_truth_tables()?;
    let sweep = start.elapsed();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut trues, mut round_trips) = (0, 0);
    for i in 0..RANDOM_EXPRS {
        let e = gen_bool(&mut rng, 4);
        dsl::check_condition(&e).map_err(|m| format!("#{i} `{e}` rejected by type checker: {m}"))?;
        let printed = e.to_string();
        let back = dsl::parse(&printed).map_err(|err| format!("#{i} `{printed}` does not parse: {err}"))?;
        ensure(back == e, || format!("#{i} round trip changed `{printed}` into `{back}`"))?;
        round_trips += 1;
        for _ in 0..4 {
            let w = gen_world(&mut rng);
            let got = dsl::evaluate(&e, &w.context());
            let want = w.eval(&e);
            ensure(ov_of(&got) == want, || format!("#{i} `{e}`: library {got:?}, oracle {want:?}"))?;
            trues += want.truthy() as usize;
        }
    }
    ensure(trues > RANDOM_EXPRS / 4 && trues < RANDOM_EXPRS * 3, || format!("degenerate random sample: {trues} true of {}", RANDOM_EXPRS * 4))?;
    Ok(format!(
        "{exhaustive} trees of depth <= 3 over 4 atoms match their truth tables ({sweep:.1?}); {RANDOM_EXPRS} random typed exprs x 4 contexts agree with the oracle; {round_trips} round trips"
    ))
}

// ---------------------------------------------------------------- scenarios

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.scenario"))
}

fn load(name: &str) -> Result<Scenario, String> {
    scenario::load(scenario_path(name)).map_err(|e| format!("{name}: {e}"))
}

fn run(name: &str, seed: Option<u64>) -> Result<RunReport, String> {
    let report = World::run(&load(name)?, &RunOptions { seed, ..RunOptions::default() });
    ensure(report.exit_code() == 0, || format!("{name} seed {seed:?}: exit {} {:?}", report.exit_code(), report.violations))?;
    Ok(report)
}

fn events(r: &RunReport, kind: TraceKind) -> Vec<&TraceEvent> {
    r.trace.of_kind(kind).collect()
}

fn attr<'a>(e: &'a TraceEvent, k: &str) -> &'a str {
    e.attr(k).unwrap_or("")
}

/// Names of fired behaviours, sorted.
fn fired(r: &RunReport) -> Vec<String> {
    let mut v: Vec<String> = events(r, TraceKind::TriggerFired).iter().map(|e| attr(e, "behaviour").to_string()).collect();
    v.sort();
    v
}

fn dispatch(seed: Option<u64>) -> Result<usize, String> {
    // Expected fired sets per injected sosCall.type.
    let expected: [(&str, &[&str]); 4] = [
        ("wildfire", &["wildfireResp"]),
        ("missing-person", &["rescue", "search"]),
        ("stranded", &["rescue"]),
        ("landslide", &["landslideResp"]),
    ];
    for (name, want) in expected {
        let r = run(name, seed)?;
        ensure(fired(&r) == want, || format!("{name}: fired {:?}, expected {want:?}", fired(&r)))?;
    }
    let wf = run("wildfire", seed)?;
    for b in events(&wf, TraceKind::RoleBound).iter().filter(|e| attr(e, "role") == "waterCarrier") {
        ensure(attr(b, "resource") == "searchPlane", || format!("waterCarrier bound to {}", attr(b, "resource")))?;
    }
    let mp = run("missing-person", seed)?;
    let pos = |pred: &dyn Fn(&TraceEvent) -> bool| mp.trace.events().iter().position(pred);
    let write = pos(&|e| e.kind == TraceKind::SharedWrite && attr(e, "path") == "sosCall.type" && attr(e, "value") == "rescue");
    let rescue = pos(&|e| e.kind == TraceKind::TriggerFired && attr(e, "behaviour") == "rescue");
    ensure(matches!((write, rescue), (Some(w), Some(f)) if w < f), || "rescue did not follow the sosCall.type=rescue write".into())?;
    let mut passed = 0;
    for name in ASSERTED {
        let r = run(name, seed)?;
        let text = std::fs::read_to_string(scenario_path("assertions").with_file_name(format!("assertions/{name}.assert")))
            .map_err(|e| format!("{name}.assert: {e}"))?;
        for res in scenario::verify(&r.trace, &text).map_err(|e| e.to_string())? {
            ensure(res.passed, || format!("{name}.assert:{} `{}` failed: {}", res.line, res.text, res.detail))?;
            passed += 1;
        }
    }
    Ok(passed)
}

fn criterion_4() -> Verdict {
    let n = dispatch(None)?;
    Ok(format!("fired sets match for all four SOS types, waterCarrier -> searchPlane, {n} shipped assertions pass"))
}

fn suspend_resume(seed: Option<u64>) -> Result<String, String> {
    let r = run("search-suspend", seed)?;
    let s = events(&r, TraceKind::InstanceSuspended);
    let res = events(&r, TraceKind::InstanceResumed);
    ensure(s.len() == 1 && res.len() == 1, || format!("{} suspensions, {} resumptions", s.len(), res.len()))?;
    let (s, res) = (s[0], res[0]);
    ensure(attr(s, "behaviour") == "search" && attr(s, "capability") == "search", || format!("unexpected suspension {s}"))?;
    ensure(attr(s, "instance") == attr(res, "instance"), || "different instances".into())?;
    ensure(attr(s, "pc") == attr(res, "pc"), || format!("suspended at pc {} resumed at pc {}", attr(s, "pc"), attr(res, "pc")))?;
    ensure(s.tick < res.tick, || "resume before suspend".into())?;
    let pc: usize = attr(s, "pc").parse().map_err(|_| "non-numeric pc")?;
    let inst = attr(s, "instance");
    let executed: Vec<&TraceEvent> =
        events(&r, TraceKind::ActionExecuted).into_iter().filter(|e| attr(e, "instance") == inst).collect();
    for p in 0..=pc {
        let at: Vec<&&TraceEvent> = executed.iter().filter(|e| attr(e, "pc") == p.to_string()).collect();
        ensure(at.len() == 1, || format!("pc {p} executed {} times", at.len()))?;
        if p < pc {
            ensure(at[0].tick <= s.tick, || format!("pc {p} re-executed after suspension"))?;
        } else {
            ensure(at[0].tick >= res.tick, || format!("pc {p} completed while suspended"))?;
        }
    }
    Ok(format!("suspended t={} pc={pc}, resumed t={} pc={pc}, no re-execution", s.tick, res.tick))
}

fn criterion_5() -> Verdict {
    suspend_resume(None)
}

fn weak_link(seed: Option<u64>) -> Result<String, String> {
    let sc = load("landslide")?;
    let r = run("landslide", seed)?;
    let link = sc.file.links.iter().find(|l| (l.a == "C2" && l.b == "site") || (l.a == "site" && l.b == "C2")).ok_or("no C2-site link")?;
    let base = link.delay.unwrap_or(sc.file.net.default_delay);
    let relay = base + sc.file.net.relay_hop_delay;
    let weak = base * sc.file.net.weak_delay_factor;
    ensure(relay + sc.file.net.max_jitter < weak, || format!("relay path ({relay}+{}) is not faster than the weak link ({weak})", sc.file.net.max_jitter))?;
    let all = r.trace.events();
    let changed = all
        .iter()
        .position(|e| e.kind == TraceKind::LinkChanged && attr(e, "quality") == "weak" && [attr(e, "a"), attr(e, "b")] == ["C2", "site"])
        .ok_or("no LinkChanged{C2,site,weak}")?;
    let deployed = all.iter().position(|e| e.kind == TraceKind::MAVDeployed).ok_or("no MAVDeployed")?;
    ensure(changed < deployed, || "MAVDeployed before LinkChanged".into())?;
    let frames: Vec<&TraceEvent> = all[deployed..].iter().filter(|e| attr(e, "kind") == "videoFeed").collect();
    ensure(!frames.is_empty(), || "no post-deployment traffic".into())?;
    for f in &frames {
        let latency: u64 = attr(f, "latency").parse().map_err(|_| "bad latency")?;
        ensure(attr(f, "route") == "relay", || format!("frame routed {}", attr(f, "route")))?;
        ensure(latency >= relay && latency <= relay + sc.file.net.max_jitter, || {
            format!("frame latency {latency} outside relay range [{relay}, {}]", relay + sc.file.net.max_jitter)
        })?;
    }
    Ok(format!(
        "LinkChanged{{weak}} at t={} then MAVDeployed at t={}; {} frames routed via relay (delay {relay}, weak would be {weak})",
        all[changed].tick,
        all[deployed].tick,
        frames.len()
    ))
}

fn criterion_6() -> Verdict {
    weak_link(None)
}

fn criterion_7() -> Verdict {
    for name in BUNDLED {
        let a = run(name, None)?;
        let b = run(name, None)?;
        ensure(a.trace.render() == b.trace.render(), || format!("{name}: same seed, different traces"))?;
        let c = run(name, Some(a_different_seed(name)))?;
        ensure(!c.decisions.is_empty(), || format!("{name}: no seeded decisions"))?;
        ensure(a.decisions != c.decisions, || format!("{name}: seed change left decisions unchanged"))?;
    }
    let seeds = [7, 1234];
    for &seed in &seeds {
        dispatch(Some(seed)).map_err(|e| format!("seed {seed}: {e}"))?;
        suspend_resume(Some(seed)).map_err(|e| format!("seed {seed}: {e}"))?;
        weak_link(Some(seed)).map_err(|e| format!("seed {seed}: {e}"))?;
    }
    criterion_2(&[101, 202]).map_err(|e| format!("churn: {e}"))?;
    Ok(format!("{} scenarios byte-identical per seed; decisions differ across seeds; criteria 2, 4-6 hold for seeds {seeds:?}", BUNDLED.len()))
}

fn a_different_seed(name: &str) -> u64 {
    1000 + name.len() as u64
}

// ---------------------------------------------------------------- criterion 8

fn random_record(rng: &mut ChaCha8Rng, id: &str, pool: &[HolonId]) -> CompositionRecord {
    let n = rng.gen_range(1..=pool.len());
    let members: BTreeSet<HolonId> = pool.choose_multiple(rng, n).cloned().collect();
    let k = rng.gen_range(0..=3);
    let behaviours = ["search", "rescue", "wildfireResp", "landslideResp", "patrol"]
        .choose_multiple(rng, k)
        .map(|b| b.to_string())
        .collect();
    CompositionRecord {
        composition_id: HolonId::new(id),
        members,
        composition_secret: holon_core::crypto::SecretId(rng.gen()),
        retired_secrets: Vec::new(),
        rules: Vec::new(),
        behaviours,
        voting: VotingConfig::default(),
        parents: Vec::new(),
    }
}

/// Brute-force weighted argmax, ties to the smallest id.
fn argmax(scores: &BTreeMap<HolonId, BTreeMap<String, f64>>, weights: &BTreeMap<String, f64>) -> HolonId {
    let total = |s: &BTreeMap<String, f64>| weights.iter().map(|(c, w)| w * s[c]).sum::<f64>();
    let best = scores.values().map(total).fold(f64::NEG_INFINITY, f64::max);
    scores.iter().find(|(_, s)| total(s) == best).map(|(id, _)| id.clone()).unwrap()
}

/// Protocol-level merge of two fixed compositions, in either order.
fn protocol_merge(a_first: bool) -> Result<(BTreeSet<HolonId>, BTreeSet<String>), String> {
    let (mut hcfw, mut reg, h) = protocol(6);
    let a = FormationRequest::new(h[0].clone(), h[0..3].to_vec()).named("A").with_behaviours(["search", "rescue"]);
    let b = FormationRequest::new(h[2].clone(), h[2..6].to_vec()).named("B").with_behaviours(["rescue", "patrol"]);
    for req in [a, b] {
        let id = hcfw.propose_composition(&reg, 0, req).map_err(|e| e.to_string())?;
        hcfw.decide(&mut reg, 0, &id, |_| Some(true)).map_err(|e| e.to_string())?;
    }
    let (x, y) = if a_first { ("A", "B") } else { ("B", "A") };
    let rec = hcfw.merge_compositions(&mut reg, 1, &HolonId::new(x), &HolonId::new(y), |_| Some(true)).map_err(|e| e.to_string())?;
    audit(&hcfw)?;
    Ok((rec.members, rec.behaviours))
}

fn criterion_8() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pool: Vec<HolonId> = (0..8).map(|i| HolonId::new(format!("H{i}"))).collect();
    let trials = 500;
    for t in 0..trials {
        let a = random_record(&mut rng, "A", &pool);
        let b = random_record(&mut rng, "B", &pool);
        let ab = merged_record(&a, &b, HolonId::new("AB"), holon_core::crypto::SecretId(1));
        let ba = merged_record(&b, &a, HolonId::new("BA"), holon_core::crypto::SecretId(2));
        let aa = merged_record(&a, &a, HolonId::new("AA"), holon_core::crypto::SecretId(3));
        let union: BTreeSet<HolonId> = a.members.iter().chain(b.members.iter()).cloned().collect();
        ensure(ab.members == ba.members && ab.members == union, || format!("trial {t}: member sets differ"))?;
        ensure(ab.behaviours == ba.behaviours, || format!("trial {t}: behaviour sets differ"))?;
        ensure(aa.members == a.members && aa.behaviours == a.behaviours, || format!("trial {t}: merge not idempotent"))?;

        let scores: BTreeMap<HolonId, BTreeMap<String, f64>> = union
            .iter()
            .map(|h| (h.clone(), CRITERIA.iter().map(|c| (c.to_string(), rng.gen_range(0.0..1.0))).collect()))
            .collect();
        let weights: BTreeMap<String, f64> = CRITERIA.iter().map(|c| (c.to_string(), rng.gen_range(0.1..2.0))).collect();
        let policy = MediatorPolicy::new(weights.clone()).map_err(|e| e.to_string())?;
        let picked = select_mediator(&scores, &policy).map_err(|e| e.to_string())?;
        ensure(picked == argmax(&scores, &weights), || format!("trial {t}: mediator {picked} is not the argmax"))?;
        for k in [1e-3, 0.37, 4.0, 250.0] {
            let scaled = scores.iter().map(|(h, s)| (h.clone(), s.iter().map(|(c, v)| (c.clone(), v * k)).collect())).collect();
            let again = select_mediator(&scaled, &policy).map_err(|e| e.to_string())?;
            ensure(again == picked, || format!("trial {t}: scaling by {k} moved the mediator {picked} -> {again}"))?;
        }
    }
    let forward = protocol_merge(true)?;
    let backward = protocol_merge(false)?;
    ensure(forward == backward, || format!("protocol merge order matters: {forward:?} vs {backward:?}"))?;
    Ok(format!("{trials} random pairs: commutative, idempotent, mediator argmax invariant under 4 positive scalings; protocol merge(A,B) = merge(B,A)"))
}

// ---------------------------------------------------------------- criterion 9

fn criterion_9() -> Verdict {
    let mut checked = 0;
    for name in BUNDLED {
        let r = run(name, None)?;
        ensure(!r.capped, || format!("{name}: did not quiesce"))?;
        let last = r.trace.events().last().map(|e| e.tick).unwrap_or(0);
        let finals: Vec<&TraceEvent> = events(&r, TraceKind::StateSnapshot).into_iter().filter(|e| e.tick == last).collect();
        ensure(!finals.is_empty(), || format!("{name}: no final snapshots"))?;
        let mut by_collab: BTreeMap<&str, Vec<&TraceEvent>> = BTreeMap::new();
        for s in finals {
            by_collab.entry(attr(s, "collab")).or_default().push(s);
        }
        for (collab, snaps) in by_collab {
            let mediator = snaps.iter().find(|s| attr(s, "mediator") == "true").ok_or_else(|| format!("{name}/{collab}: no mediator snapshot"))?;
            for s in &snaps {
                ensure(attr(s, "state").as_bytes() == attr(mediator, "state").as_bytes(), || {
                    format!("{name}/{collab}: {} differs from mediator {}", attr(s, "holon"), attr(mediator, "holon"))
                })?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} final participant snapshots byte-identical to their mediator's across {} scenarios", BUNDLED.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("protocol soundness sweep", criterion_1),
        ("secret confinement under churn", || criterion_2(&[1, 2, 3, 4, 5, 6, 7, 8])),
        ("condition oracle equivalence", criterion_3),
        ("behaviour dispatch matrix", criterion_4),
        ("suspend and resume", criterion_5),
        ("weak-link reaction", criterion_6),
        ("determinism", criterion_7),
        ("merge algebra", criterion_8),
        ("convergence", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        match check() {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail} [{:.2?}]", i + 1, start.elapsed()),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {why} [{:.2?}]", i + 1, start.elapsed());
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
