//! School-choice counterfactuals: student-proposing deferred acceptance with
//! program capacities and lottery tie-breaking, population perturbation and
//! popularity-weighted preference randomization.

use std::collections::{BinaryHeap, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::da::Matching;
use crate::error::{Error, Result};
use crate::market::Market;
use crate::oracle::enumerate_stable_matchings;
use crate::rng::{derive_seed, rng_from_seed};
use crate::table::{Cell, Table};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub program: String,
    /// Coarse priority at this program; lower is better, absent is worst.
    pub priority_class: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Student {
    pub id: String,
    /// Most preferred first.
    pub choices: Vec<Choice>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roster {
    pub students: Vec<Student>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub id: String,
    pub capacity: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Programs {
    programs: Vec<Program>,
    index: HashMap<String, usize>,
}

impl Programs {
    pub fn new(programs: Vec<Program>) -> Result<Self> {
        let mut index = HashMap::with_capacity(programs.len());
        for (p, prog) in programs.iter().enumerate() {
            if prog.capacity == 0 {
                return Err(Error::InvalidInput(format!(
                    "program {} has capacity 0",
                    prog.id
                )));
            }
            if index.insert(prog.id.clone(), p).is_some() {
                return Err(Error::Integrity(format!(
                    "duplicate program id {}",
                    prog.id
                )));
            }
        }
        Ok(Programs { programs, index })
    }

    pub fn len(&self) -> usize {
        self.programs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.programs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn programs(&self) -> &[Program] {
        &self.programs
    }
}

impl Roster {
    pub fn len(&self) -> usize {
        self.students.len()
    }

    pub fn is_empty(&self) -> bool {
        self.students.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for s in &self.students {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::Integrity(format!("duplicate student id {}", s.id)));
            }
            let mut seen = HashSet::new();
            for c in &s.choices {
                if !seen.insert(c.program.as_str()) {
                    return Err(Error::InvalidInput(format!(
                        "student {} lists program {} twice",
                        s.id, c.program
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct RosterRow {
    student_id: String,
    rank: usize,
    program_id: String,
    #[serde(default)]
    priority_class: Option<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProgramRow {
    program_id: String,
    capacity: usize,
}

fn parse_error(path: &Path, err: &csv::Error) -> Error {
    let line = err.position().map_or(0, |p| p.line());
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: err.to_string(),
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file))
}

/// Read a roster CSV: `student_id,rank,program_id[,priority_class]`, one row
/// per listed program, ranks starting at 1.
pub fn load_roster(path: &Path) -> Result<Roster> {
    let mut reader = open_csv(path)?;
    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(usize, u64, Choice)>> = HashMap::new();
    let mut record = csv::StringRecord::new();
    let headers = reader.headers().map_err(|e| parse_error(path, &e))?.clone();
    loop {
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(parse_error(path, &e)),
        }
        let line = record.position().map_or(0, |p| p.line());
        let row: RosterRow = record
            .deserialize(Some(&headers))
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: e.to_string(),
            })?;
        if row.rank == 0 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: "ranks start at 1".into(),
            });
        }
        let entry = rows.entry(row.student_id.clone()).or_insert_with(|| {
            order.push(row.student_id.clone());
            Vec::new()
        });
        entry.push((
            row.rank,
            line,
            Choice {
                program: row.program_id,
                priority_class: row.priority_class,
            },
        ));
    }
    let mut students = Vec::with_capacity(order.len());
    for id in order {
        let mut list = rows.remove(&id).expect("grouped above");
        list.sort_by_key(|(rank, line, _)| (*rank, *line));
        for (expected, (rank, line, c)) in list.iter().enumerate() {
            if *rank != expected + 1 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: *line,
                    message: format!(
                        "student {id}: ranks must run 1..{} without gaps or repeats (rank {rank} for program {})",
                        list.len(),
                        c.program
                    ),
                });
            }
        }
        students.push(Student {
            id,
            choices: list.into_iter().map(|(_, _, c)| c).collect(),
        });
    }
    let roster = Roster { students };
    roster.validate()?;
    Ok(roster)
}

/// Read a programs CSV: `program_id,capacity`.
pub fn load_programs(path: &Path) -> Result<Programs> {
    let mut reader = open_csv(path)?;
    let mut programs = Vec::new();
    for rec in reader.deserialize::<ProgramRow>() {
        let row = rec.map_err(|e| parse_error(path, &e))?;
        programs.push(Program {
            id: row.program_id,
            capacity: row.capacity,
        });
    }
    Programs::new(programs)
}

pub fn write_roster(roster: &Roster, path: &Path) -> Result<()> {
    let with_class = roster
        .students
        .iter()
        .any(|s| s.choices.iter().any(|c| c.priority_class.is_some()));
    let mut table = if with_class {
        Table::new(["student_id", "rank", "program_id", "priority_class"])
    } else {
        Table::new(["student_id", "rank", "program_id"])
    };
    for s in &roster.students {
        for (r, c) in s.choices.iter().enumerate() {
            let mut row: Vec<Cell> = vec![
                s.id.clone().into(),
                (r + 1).into(),
                c.program.clone().into(),
            ];
            if with_class {
                row.push(
                    c.priority_class
                        .map_or(Cell::Text(String::new()), |v| Cell::Int(v as i64)),
                );
            }
            table.push(row);
        }
    }
    crate::table::emit_table(&table, path, crate::table::Format::Csv)
}

pub fn write_programs(programs: &Programs, path: &Path) -> Result<()> {
    let mut table = Table::new(["program_id", "capacity"]);
    for p in programs.programs() {
        table.push(vec![p.id.clone().into(), p.capacity.into()]);
    }
    crate::table::emit_table(&table, path, crate::table::Format::Csv)
}

/// Roster joined with programs, with everything resolved to indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SchoolMarket {
    pub student_ids: Vec<String>,
    /// Program indices, most preferred first.
    pub prefs: Vec<Vec<usize>>,
    /// Priority class per entry of `prefs`.
    pub classes: Vec<Vec<Option<u32>>>,
    pub capacities: Vec<usize>,
}

impl SchoolMarket {
    pub fn join(roster: &Roster, programs: &Programs) -> Result<Self> {
        roster.validate()?;
        let mut dangling: Vec<String> = Vec::new();
        let mut prefs = Vec::with_capacity(roster.len());
        let mut classes = Vec::with_capacity(roster.len());
        for s in &roster.students {
            let mut p_list = Vec::with_capacity(s.choices.len());
            let mut c_list = Vec::with_capacity(s.choices.len());
            for c in &s.choices {
                match programs.get(&c.program) {
                    Some(p) => p_list.push(p),
                    None => dangling.push(format!("student {} -> program {}", s.id, c.program)),
                }
                c_list.push(c.priority_class);
            }
            prefs.push(p_list);
            classes.push(c_list);
        }
        if !dangling.is_empty() {
            return Err(Error::Integrity(format!(
                "unknown programs: {}",
                dangling.join(", ")
            )));
        }
        Ok(SchoolMarket {
            student_ids: roster.students.iter().map(|s| s.id.clone()).collect(),
            prefs,
            classes,
            capacities: programs.programs().iter().map(|p| p.capacity).collect(),
        })
    }

    pub fn num_students(&self) -> usize {
        self.prefs.len()
    }

    pub fn num_programs(&self) -> usize {
        self.capacities.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TieBreak {
    /// One lottery number per student shared by every program.
    Single,
    /// An independent lottery at every program.
    Multiple,
}

/// Program-side priority key of every (student, listed program) pair.
/// Smaller keys are better.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Priorities {
    /// `keys[s][c]` is program `prefs[s][c]`'s key for student `s`.
    keys: Vec<Vec<PriorityKey>>,
}

/// `(priority class, lottery, student)`; lexicographic.
pub type PriorityKey = (u32, u64, u32);

impl Priorities {
    pub fn key(&self, student: usize, choice: usize) -> PriorityKey {
        self.keys[student][choice]
    }

    /// Applicants to `program` from best to worst.
    pub fn program_order(&self, market: &SchoolMarket, program: usize) -> Vec<usize> {
        let mut applicants: Vec<(PriorityKey, usize)> = Vec::new();
        for (s, list) in market.prefs.iter().enumerate() {
            if let Some(c) = list.iter().position(|&p| p == program) {
                applicants.push((self.keys[s][c], s));
            }
        }
        applicants.sort();
        applicants.into_iter().map(|(_, s)| s).collect()
    }
}

/// Every student draws one lottery number used by all programs; programs
/// order applicants by (priority class, lottery).
pub fn apply_single_tiebreak(market: &SchoolMarket, seed: u64) -> Priorities {
    apply_tiebreak(market, TieBreak::Single, seed)
}

pub fn apply_tiebreak(market: &SchoolMarket, rule: TieBreak, seed: u64) -> Priorities {
    let mut rng = rng_from_seed(seed);
    let n = market.num_students();
    let mut lottery: Vec<u64> = (0..n as u64).collect();
    lottery.shuffle(&mut rng);
    let keys = market
        .classes
        .iter()
        .enumerate()
        .map(|(s, cls)| {
            cls.iter()
                .map(|c| {
                    let draw = match rule {
                        TieBreak::Single => lottery[s],
                        TieBreak::Multiple => rng.random::<u64>(),
                    };
                    (c.unwrap_or(u32::MAX), draw, s as u32)
                })
                .collect()
        })
        .collect();
    Priorities { keys }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    /// Program index per student, `None` when unassigned.
    pub program: Vec<Option<usize>>,
    /// 1-based position of the assigned program in the student's list.
    pub choice_rank: Vec<Option<usize>>,
    pub filled: Vec<usize>,
}

/// Student-proposing DA; each program tentatively holds its best
/// `capacity` applicants.
pub fn run_student_da(market: &SchoolMarket, priorities: &Priorities) -> Assignment {
    let n = market.num_students();
    let mut next = vec![0usize; n];
    let mut held: Vec<BinaryHeap<(PriorityKey, usize)>> = market
        .capacities
        .iter()
        .map(|&c| BinaryHeap::with_capacity(c + 1))
        .collect();
    for entrant in 0..n {
        let mut s = entrant;
        loop {
            let c = next[s];
            let Some(&p) = market.prefs[s].get(c) else {
                break;
            };
            next[s] += 1;
            let key = priorities.key(s, c);
            let heap = &mut held[p];
            if heap.len() < market.capacities[p] {
                heap.push((key, s));
                break;
            }
            let worst = heap.peek().expect("capacity >= 1").0;
            if key < worst {
                let (_, evicted) = heap.pop().expect("non-empty");
                heap.push((key, s));
                s = evicted;
            }
        }
    }
    let mut program = vec![None; n];
    let mut choice_rank = vec![None; n];
    for (p, heap) in held.iter().enumerate() {
        for &(_, s) in heap.iter() {
            program[s] = Some(p);
            choice_rank[s] = Some(next[s]);
        }
    }
    Assignment {
        program,
        choice_rank,
        filled: held.iter().map(BinaryHeap::len).collect(),
    }
}

/// A (student, program) pair that blocks `assignment`, if any.
pub fn find_school_blocking_pair(
    market: &SchoolMarket,
    priorities: &Priorities,
    assignment: &Assignment,
) -> Option<(usize, usize)> {
    // worst held key per program
    let mut worst: Vec<Option<PriorityKey>> = vec![None; market.num_programs()];
    for s in 0..market.num_students() {
        if let Some(r) = assignment.choice_rank[s] {
            let k = priorities.key(s, r - 1);
            let w = &mut worst[market.prefs[s][r - 1]];
            *w = Some(w.map_or(k, |x| x.max(k)));
        }
    }
    for s in 0..market.num_students() {
        let limit = assignment.choice_rank[s].map_or(market.prefs[s].len(), |r| r - 1);
        for c in 0..limit {
            let p = market.prefs[s][c];
            let has_seat = assignment.filled[p] < market.capacities[p];
            if has_seat || worst[p].is_some_and(|w| priorities.key(s, c) < w) {
                return Some((s, p));
            }
        }
    }
    None
}

/// Clone each program into unit-capacity seats and build the equivalent
/// one-to-one market: students rank a program's seats consecutively, each
/// seat ranks applicants in program priority order. Returns the market and
/// the program of each seat.
pub fn seat_split_market(
    market: &SchoolMarket,
    priorities: &Priorities,
) -> Result<(Market, Vec<usize>)> {
    let mut first_seat = Vec::with_capacity(market.num_programs());
    let mut seat_program = Vec::new();
    for (p, &cap) in market.capacities.iter().enumerate() {
        first_seat.push(seat_program.len());
        seat_program.extend(std::iter::repeat_n(p, cap));
    }
    let students: Vec<Vec<usize>> = market
        .prefs
        .iter()
        .map(|list| {
            list.iter()
                .flat_map(|&p| first_seat[p]..first_seat[p] + market.capacities[p])
                .collect()
        })
        .collect();
    let mut seats = vec![Vec::new(); seat_program.len()];
    for (p, &start) in first_seat.iter().enumerate() {
        let order = priorities.program_order(market, p);
        for seat in &mut seats[start..start + market.capacities[p]] {
            seat.clone_from(&order);
        }
    }
    Ok((Market::from_lists(&students, &seats)?, seat_program))
}

/// Student-optimal stable assignment by exhaustive enumeration on the
/// seat-split market. Small instances only.
pub fn brute_force_student_optimal(
    market: &SchoolMarket,
    priorities: &Priorities,
) -> Result<Vec<Option<usize>>> {
    let (split, seat_program) = seat_split_market(market, priorities)?;
    let stable = enumerate_stable_matchings(&split)?;
    let best: &Matching = stable
        .first()
        .ok_or_else(|| Error::InvalidInput("no stable matching found".into()))?;
    Ok((0..market.num_students())
        .map(|s| best.wife(s).map(|seat| seat_program[seat]))
        .collect())
}

/// Remove `|delta|` students uniformly without replacement (`delta < 0`) or
/// append `delta` copies of uniformly drawn students with fresh ids
/// (`delta > 0`).
pub fn perturb_population(roster: &Roster, delta: i64, seed: u64) -> Result<Roster> {
    let mut rng = rng_from_seed(seed);
    let n = roster.len();
    if delta < 0 {
        let remove = delta.unsigned_abs() as usize;
        if remove > n {
            return Err(Error::InvalidInput(format!(
                "cannot remove {remove} students from a roster of {n}"
            )));
        }
        let mut keep = vec![true; n];
        for idx in rand::seq::index::sample(&mut rng, n, remove) {
            keep[idx] = false;
        }
        let students = roster
            .students
            .iter()
            .zip(keep)
            .filter(|&(_, k)| k)
            .map(|(s, _)| s.clone())
            .collect();
        return Ok(Roster { students });
    }
    let add = delta as usize;
    if add > 0 && n == 0 {
        return Err(Error::InvalidInput(
            "cannot duplicate students from an empty roster".into(),
        ));
    }
    let mut ids: HashSet<String> = roster.students.iter().map(|s| s.id.clone()).collect();
    let mut out = roster.clone();
    for copy in 0..add {
        let src = &roster.students[rng.random_range(0..n)];
        let mut suffix = copy;
        let id = loop {
            let candidate = format!("{}~dup{}", src.id, suffix);
            if ids.insert(candidate.clone()) {
                break candidate;
            }
            suffix += add;
        };
        out.students.push(Student {
            id,
            choices: src.choices.clone(),
        });
    }
    Ok(out)
}

/// Redraw every list with its length kept, sampling programs without
/// replacement with probability proportional to their application counts
/// in `roster`. Priority classes are dropped.
pub fn randomize_preferences(roster: &Roster, programs: &Programs, seed: u64) -> Result<Roster> {
    let mut weights = vec![0f64; programs.len()];
    for s in &roster.students {
        for c in &s.choices {
            let p = programs
                .get(&c.program)
                .ok_or_else(|| Error::Integrity(format!("unknown program {}", c.program)))?;
            weights[p] += 1.0;
        }
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::InvalidInput(
            "no applications to derive popularity weights from".into(),
        ));
    }
    let mut rng = rng_from_seed(seed);
    let mut students = Vec::with_capacity(roster.len());
    let mut keys: Vec<(f64, usize)> = Vec::with_capacity(programs.len());
    for s in &roster.students {
        let len = s.choices.len();
        if len > programs.len() {
            return Err(Error::InvalidInput(format!(
                "student {} lists {len} programs but only {} exist",
                s.id,
                programs.len()
            )));
        }
        // Successive weighted draws without replacement come out in
        // decreasing order of u^(1/w).
        keys.clear();
        for (p, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                let u: f64 = rng.random();
                keys.push((u.ln() / w, p));
            }
        }
        keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        students.push(Student {
            id: s.id.clone(),
            choices: keys[..len]
                .iter()
                .map(|&(_, p)| Choice {
                    program: programs.programs()[p].id.clone(),
                    priority_class: None,
                })
                .collect(),
        });
    }
    Ok(Roster { students })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssignmentSummary {
    /// `(k, fraction assigned within their top k)`.
    pub top: Vec<(usize, f64)>,
    pub unassigned: f64,
}

pub fn summarize_assignment(assignment: &Assignment, ks: &[usize]) -> Result<AssignmentSummary> {
    if ks.is_empty() {
        return Err(Error::InvalidInput("need at least one k".into()));
    }
    let n = assignment.choice_rank.len();
    let frac = |count: usize| if n == 0 { 0.0 } else { count as f64 / n as f64 };
    let top = ks
        .iter()
        .map(|&k| {
            let c = assignment
                .choice_rank
                .iter()
                .filter(|r| r.is_some_and(|r| r <= k))
                .count();
            (k, frac(c))
        })
        .collect();
    let unassigned = frac(
        assignment
            .choice_rank
            .iter()
            .filter(|r| r.is_none())
            .count(),
    );
    Ok(AssignmentSummary { top, unassigned })
}

/// One counterfactual cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualRow {
    pub delta: i64,
    pub seed: u64,
    pub randomized: bool,
    pub summary: AssignmentSummary,
}

/// Randomize (optionally, with weights from the input roster), perturb the
/// population by `delta`, break ties, run DA and summarize. The original
/// data uses single tie-breaking; randomized preferences come with
/// independent per-program lotteries.
pub fn run_counterfactual(
    roster: &Roster,
    programs: &Programs,
    delta: i64,
    seed: u64,
    randomized: bool,
    ks: &[usize],
) -> Result<CounterfactualRow> {
    let base = if randomized {
        randomize_preferences(roster, programs, derive_seed(seed, &[1]))?
    } else {
        roster.clone()
    };
    let perturbed = perturb_population(&base, delta, derive_seed(seed, &[2]))?;
    let market = SchoolMarket::join(&perturbed, programs)?;
    let rule = if randomized {
        TieBreak::Multiple
    } else {
        TieBreak::Single
    };
    let priorities = apply_tiebreak(&market, rule, derive_seed(seed, &[3]));
    let assignment = run_student_da(&market, &priorities);
    Ok(CounterfactualRow {
        delta,
        seed,
        randomized,
        summary: summarize_assignment(&assignment, ks)?,
    })
}

pub fn counterfactual_table(rows: &[CounterfactualRow], ks: &[usize]) -> Table {
    let mut columns: Vec<String> = vec!["delta".into(), "seed".into(), "randomized".into()];
    columns.extend(ks.iter().map(|k| format!("top{k}")));
    columns.push("unassigned".into());
    let mut table = Table::new(columns);
    for r in rows {
        let mut row: Vec<Cell> = vec![r.delta.into(), r.seed.into(), r.randomized.into()];
        row.extend(r.summary.top.iter().map(|&(_, f)| Cell::Float(f)));
        row.push(r.summary.unassigned.into());
        table.push(row);
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::IndexedRandom;

    fn programs(caps: &[usize]) -> Programs {
        Programs::new(
            caps.iter()
                .enumerate()
                .map(|(p, &capacity)| Program {
                    id: format!("P{p}"),
                    capacity,
                })
                .collect(),
        )
        .unwrap()
    }

    fn student(id: &str, list: &[usize]) -> Student {
        Student {
            id: id.into(),
            choices: list
                .iter()
                .map(|p| Choice {
                    program: format!("P{p}"),
                    priority_class: None,
                })
                .collect(),
        }
    }

    fn random_instance(seed: u64, students: usize, caps: &[usize]) -> (Roster, Programs) {
        let mut rng = rng_from_seed(seed);
        let all: Vec<usize> = (0..caps.len()).collect();
        let roster = Roster {
            students: (0..students)
                .map(|s| {
                    let len = rng.random_range(1..=caps.len());
                    let list: Vec<usize> = all.choose_multiple(&mut rng, len).copied().collect();
                    let mut st = student(&format!("S{s}"), &list);
                    for c in &mut st.choices {
                        if rng.random_bool(0.3) {
                            c.priority_class = Some(rng.random_range(0..2));
                        }
                    }
                    st
                })
                .collect(),
        };
        (roster, programs(caps))
    }

    #[test]
    fn student_da_matches_seat_split_enumeration() {
        for seed in 0..200 {
            let (roster, progs) = random_instance(seed, 5, &[2, 1, 2]);
            let market = SchoolMarket::join(&roster, &progs).unwrap();
            for rule in [TieBreak::Single, TieBreak::Multiple] {
                let pri = apply_tiebreak(&market, rule, seed);
                let fast = run_student_da(&market, &pri);
                assert_eq!(find_school_blocking_pair(&market, &pri, &fast), None);
                let slow = brute_force_student_optimal(&market, &pri).unwrap();
                assert_eq!(fast.program, slow, "seed {seed} {rule:?}");
            }
        }
    }

    #[test]
    fn capacity_is_respected_and_ranks_agree() {
        let (roster, progs) = random_instance(7, 40, &[3, 5, 2, 4]);
        let market = SchoolMarket::join(&roster, &progs).unwrap();
        let a = run_student_da(&market, &apply_single_tiebreak(&market, 1));
        for p in 0..market.num_programs() {
            let held = a.program.iter().filter(|x| **x == Some(p)).count();
            assert_eq!(held, a.filled[p]);
            assert!(held <= market.capacities[p]);
        }
        for s in 0..market.num_students() {
            assert_eq!(
                a.program[s],
                a.choice_rank[s].map(|r| market.prefs[s][r - 1])
            );
        }
    }

    #[test]
    fn single_lottery_without_classes_gives_common_order() {
        let (mut roster, progs) = random_instance(3, 30, &[2, 2, 2]);
        for s in &mut roster.students {
            s.choices = (0..3)
                .map(|p| Choice {
                    program: format!("P{p}"),
                    priority_class: None,
                })
                .collect();
        }
        let market = SchoolMarket::join(&roster, &progs).unwrap();
        let pri = apply_single_tiebreak(&market, 11);
        let first = pri.program_order(&market, 0);
        assert_eq!(pri.program_order(&market, 1), first);
        assert_eq!(pri.program_order(&market, 2), first);
        assert_eq!(apply_single_tiebreak(&market, 11), pri);
    }

    #[test]
    fn priority_class_dominates_lottery() {
        let roster = Roster {
            students: vec![
                student("a", &[0]),
                Student {
                    id: "b".into(),
                    choices: vec![Choice {
                        program: "P0".into(),
                        priority_class: Some(0),
                    }],
                },
            ],
        };
        let market = SchoolMarket::join(&roster, &programs(&[1])).unwrap();
        for seed in 0..20 {
            let a = run_student_da(&market, &apply_single_tiebreak(&market, seed));
            assert_eq!(a.program, vec![None, Some(0)]);
        }
    }

    #[test]
    fn join_names_dangling_programs() {
        let roster = Roster {
            students: vec![student("x", &[0, 9])],
        };
        let err = SchoolMarket::join(&roster, &programs(&[1])).unwrap_err();
        assert!(err.to_string().contains("P9"), "{err}");
    }

    #[test]
    fn perturbation_sizes_and_ids() {
        let (roster, _) = random_instance(5, 20, &[1, 1, 1]);
        let fewer = perturb_population(&roster, -7, 1).unwrap();
        assert_eq!(fewer.len(), 13);
        assert!(fewer.students.iter().all(|s| roster.students.contains(s)));
        let more = perturb_population(&roster, 30, 1).unwrap();
        assert_eq!(more.len(), 50);
        more.validate().unwrap();
        assert_eq!(&more.students[..20], &roster.students[..]);
        assert!(perturb_population(&roster, -21, 1).is_err());
        assert_eq!(perturb_population(&roster, 0, 1).unwrap(), roster);
    }

    #[test]
    fn randomized_lists_keep_lengths_and_follow_popularity() {
        let progs = programs(&[1, 1, 1, 1]);
        // P0 listed 9 times, P1 once, P2 and P3 never.
        let mut students = vec![student("s0", &[1, 0])];
        students.extend((1..9).map(|s| student(&format!("s{s}"), &[0])));
        let roster = Roster { students };
        let out = randomize_preferences(&roster, &progs, 4).unwrap();
        for (a, b) in roster.students.iter().zip(&out.students) {
            assert_eq!(a.choices.len(), b.choices.len());
            assert!(b.choices.iter().all(|c| c.priority_class.is_none()));
            assert!(b
                .choices
                .iter()
                .all(|c| c.program == "P0" || c.program == "P1"));
        }
        // first draw hits P0 with probability 0.9
        let mut hits = 0;
        for seed in 0..2000 {
            let out = randomize_preferences(&roster, &progs, seed).unwrap();
            hits += usize::from(out.students[1].choices[0].program == "P0");
        }
        let freq = hits as f64 / 2000.0;
        assert!((freq - 0.9).abs() < 0.03, "{freq}");
    }

    #[test]
    fn summary_fractions() {
        let a = Assignment {
            program: vec![Some(0), Some(1), None, Some(0)],
            choice_rank: vec![Some(1), Some(3), None, Some(2)],
            filled: vec![2, 1],
        };
        let s = summarize_assignment(&a, &[1, 3]).unwrap();
        assert_eq!(s.top, vec![(1, 0.25), (3, 0.75)]);
        assert_eq!(s.unassigned, 0.25);
    }

    #[test]
    fn more_students_never_raise_top_choice_share_on_average() {
        let (roster, progs) = random_instance(9, 60, &[4, 4, 4, 4, 4]);
        let mean_top1 = |delta: i64| {
            (0..40)
                .map(|seed| {
                    run_counterfactual(&roster, &progs, delta, seed, false, &[1])
                        .unwrap()
                        .summary
                        .top[0]
                        .1
                })
                .sum::<f64>()
                / 40.0
        };
        let (lo, mid, hi) = (mean_top1(-30), mean_top1(0), mean_top1(60));
        assert!(lo >= mid && mid >= hi, "{lo} {mid} {hi}");
    }

    #[test]
    fn roster_round_trip_and_rank_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (roster, progs) = random_instance(2, 6, &[1, 2, 3]);
        let rp = dir.path().join("roster.csv");
        let pp = dir.path().join("programs.csv");
        write_roster(&roster, &rp).unwrap();
        write_programs(&progs, &pp).unwrap();
        assert_eq!(load_roster(&rp).unwrap(), roster);
        assert_eq!(load_programs(&pp).unwrap(), progs);

        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "student_id,rank,program_id\na,1,P0\na,3,P1\n").unwrap();
        match load_roster(&bad).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
        std::fs::write(&bad, "student_id,rank,program_id\na,1,P0\na,x,P1\n").unwrap();
        match load_roster(&bad).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
    }
}
