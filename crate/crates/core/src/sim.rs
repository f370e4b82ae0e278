//! Trajectory simulation, exit-time detection and regeneration blocks.
//!
//! Trajectories live in a per-walk arena that interns every visited word as
//! a tree node, so one step costs O(1) and word identity is a node id. Exit
//! times are recovered with a prefix stack: `e_k` is the last time the k-th
//! letter of the final position was set, which is exactly the first moment
//! from which the length-k prefix never changes again.
//!
//! A level `k` is a regeneration level when its exit letter equals the
//! chosen letter `g` and the exit vertex is visited for the first time at
//! its exit time; the walk's law between consecutive regeneration times is
//! i.i.d. after stripping the common prefix.

use std::collections::HashMap;

use rand::Rng;
use thiserror::Error;

use crate::model::FreeProduct;
use crate::rng::replica_rng;
use crate::word::{Factor, Letter, Word, ROOT_STATE};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("step {0} of the supplied path has zero probability")]
    ImpossibleStep(usize),
    #[error("{0}")]
    Precondition(String),
}

#[derive(Copy, Clone, Debug)]
struct ArenaNode {
    parent: u32,
    letter: Letter,
    depth: u32,
    first_visit: u32,
}

/// Seed coordinates of one walk.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct WalkSeed {
    pub master: u64,
    pub stream: u64,
}

/// A simulated (or replayed) trajectory with its visited-word arena and
/// first-visit record.
pub struct Trajectory {
    nodes: Vec<ArenaNode>,
    children: HashMap<(u32, Letter), u32>,
    steps: Vec<u32>,
    seed: Option<WalkSeed>,
}

pub const ARENA_ROOT: u32 = 0;

impl Trajectory {
    fn new(seed: Option<WalkSeed>) -> Trajectory {
        Trajectory {
            nodes: vec![ArenaNode {
                parent: 0,
                letter: Letter { factor: Factor::One, state: u32::MAX },
                depth: 0,
                first_visit: 0,
            }],
            children: HashMap::new(),
            steps: vec![ARENA_ROOT],
            seed,
        }
    }

    fn intern_child(&mut self, parent: u32, letter: Letter, time: u32) -> u32 {
        if let Some(&id) = self.children.get(&(parent, letter)) {
            return id;
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(ArenaNode {
            parent,
            letter,
            depth: self.nodes[parent as usize].depth + 1,
            first_visit: time,
        });
        self.children.insert((parent, letter), id);
        id
    }

    /// Number of steps (positions are `0..=len`).
    pub fn len(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn seed(&self) -> Option<WalkSeed> {
        self.seed
    }

    pub fn node_at(&self, time: usize) -> u32 {
        self.steps[time]
    }

    pub fn depth_of(&self, node: u32) -> u32 {
        self.nodes[node as usize].depth
    }

    pub fn parent_of(&self, node: u32) -> u32 {
        self.nodes[node as usize].parent
    }

    pub fn letter_of(&self, node: u32) -> Option<Letter> {
        (node != ARENA_ROOT).then(|| self.nodes[node as usize].letter)
    }

    pub fn first_visit_of(&self, node: u32) -> u32 {
        self.nodes[node as usize].first_visit
    }

    /// Word length of the position at a time.
    pub fn norm_at(&self, time: usize) -> u32 {
        self.depth_of(self.steps[time])
    }

    pub fn word_at(&self, time: usize) -> Word {
        self.word_of(self.steps[time])
    }

    pub fn word_of(&self, node: u32) -> Word {
        let mut letters = Vec::with_capacity(self.depth_of(node) as usize);
        let mut cur = node;
        while cur != ARENA_ROOT {
            letters.push(self.nodes[cur as usize].letter);
            cur = self.nodes[cur as usize].parent;
        }
        letters.reverse();
        Word::from_letters(letters).expect("arena nodes alternate")
    }

    /// Suffix of the word at `node` relative to an ancestor at `anchor_depth`.
    pub fn suffix_of(&self, node: u32, anchor_depth: u32) -> Word {
        let mut letters = Vec::new();
        let mut cur = node;
        while self.depth_of(cur) > anchor_depth {
            letters.push(self.nodes[cur as usize].letter);
            cur = self.nodes[cur as usize].parent;
        }
        letters.reverse();
        Word::from_letters(letters).expect("arena nodes alternate")
    }

    /// Distinct nodes first visited up to `time`, in first-visit order.
    pub fn range_nodes_at(&self, time: usize) -> Vec<u32> {
        let t = time as u32;
        (0..self.nodes.len() as u32).filter(|&n| self.first_visit_of(n) <= t).collect()
    }

    /// `|R_m|` for m = 0..=len.
    pub fn range_curve(&self) -> Vec<u32> {
        let mut new_at = vec![0u32; self.len() + 1];
        for n in &self.nodes {
            new_at[n.first_visit as usize] += 1;
        }
        let mut acc = 0;
        new_at
            .iter()
            .map(|&c| {
                acc += c;
                acc
            })
            .collect()
    }

    /// Distinct nodes visited in the closed time window; each node listed
    /// once.
    pub fn window_nodes(&self, from: usize, to: usize) -> Vec<u32> {
        let mut seen: Vec<u32> = self.steps[from..=to].to_vec();
        seen.sort_unstable();
        seen.dedup();
        seen
    }
}

/// Simulate `n` steps from the root, reproducible from the seed.
pub fn run_walk(fp: &FreeProduct, n: usize, seed: WalkSeed) -> Trajectory {
    let mut rng = replica_rng(seed.master, seed.stream);
    let mut tr = Trajectory::new(Some(seed));
    let alpha = fp.alpha();
    let mut cur = ARENA_ROOT;
    for time in 1..=n {
        let u: f64 = rng.random();
        let (factor, u_row) = if u < alpha {
            (Factor::One, u / alpha)
        } else {
            (Factor::Two, (u - alpha) / (1.0 - alpha))
        };
        let (prefix, state) = match tr.letter_of(cur) {
            Some(l) if l.factor == factor => (tr.parent_of(cur), l.state),
            _ => (cur, ROOT_STATE),
        };
        let dest = fp.factor(factor).sample_row(state, u_row);
        cur = if dest == ROOT_STATE {
            prefix
        } else {
            tr.intern_child(prefix, Letter { factor, state: dest }, time as u32)
        };
        tr.steps.push(cur);
    }
    tr
}

/// Replay an explicit word path (used by tests and audits); every step must
/// have positive probability.
pub fn replay_path(fp: &FreeProduct, path: &[Word]) -> Result<Trajectory, SimError> {
    if path.first().map(|w| w.is_root()) != Some(true) {
        return Err(SimError::Precondition("a trajectory starts at the root".to_string()));
    }
    let mut tr = Trajectory::new(None);
    let mut cur = ARENA_ROOT;
    for (i, pair) in path.windows(2).enumerate() {
        if fp.step_prob(&pair[0], &pair[1]) <= 0.0 {
            return Err(SimError::ImpossibleStep(i + 1));
        }
        let time = (i + 1) as u32;
        let w = &pair[1];
        cur = if w.len() + 1 == pair[0].len() {
            tr.parent_of(cur)
        } else {
            let letter = *w.letters().last().expect("non-root successor");
            let parent = if w.len() == pair[0].len() { tr.parent_of(cur) } else { cur };
            tr.intern_child(parent, letter, time)
        };
        tr.steps.push(cur);
    }
    Ok(tr)
}

/// One exit point: the first time from which the length-k prefix of the walk
/// never changes again (within the horizon).
#[derive(Copy, Clone, Debug)]
pub struct ExitPoint {
    pub k: u32,
    pub time: u32,
    pub node: u32,
    pub letter: Letter,
    /// Exit held for at least `guard` further steps.
    pub confirmed: bool,
}

/// All exit times of a trajectory, with the confirmation guard applied.
#[derive(Clone, Debug)]
pub struct ExitRecord {
    pub exits: Vec<ExitPoint>,
    pub horizon: usize,
    pub guard: usize,
}

impl ExitRecord {
    /// `k(n)`: the maximal k with `e_k ≤ n`.
    pub fn k_of(&self, n: usize) -> usize {
        self.exits.iter().take_while(|e| e.time as usize <= n).count()
    }

    pub fn confirmed(&self) -> impl Iterator<Item = &ExitPoint> {
        self.exits.iter().filter(|e| e.confirmed)
    }
}

/// Recover the exit times of a trajectory. `guard` is the number of
/// trailing steps an exit must survive to count as confirmed.
pub fn exit_times(tr: &Trajectory, guard: usize) -> ExitRecord {
    let n = tr.len();
    // stack[d-1] = (node at depth d on the current prefix, entry time)
    let mut stack: Vec<(u32, u32)> = Vec::new();
    for time in 1..=n {
        let prev = tr.node_at(time - 1);
        let cur = tr.node_at(time);
        let (dp, dc) = (tr.depth_of(prev), tr.depth_of(cur));
        if dc == dp + 1 {
            stack.push((cur, time as u32));
        } else if dc + 1 == dp {
            stack.pop();
        } else {
            stack.pop();
            stack.push((cur, time as u32));
        }
        debug_assert_eq!(stack.len(), dc as usize);
    }
    let exits = stack
        .iter()
        .enumerate()
        .map(|(i, &(node, time))| ExitPoint {
            k: (i + 1) as u32,
            time,
            node,
            letter: tr.letter_of(node).expect("exit nodes are below the root"),
            confirmed: time as usize + guard <= n,
        })
        .collect();
    ExitRecord { exits, horizon: n, guard }
}

/// One regeneration block in normalized coordinates.
#[derive(Clone, Debug)]
pub struct RegenBlock {
    pub index: usize,
    /// `T_i − T_{i−1}`.
    pub duration: u32,
    pub start_time: u32,
    pub end_time: u32,
    /// Distinct words visited during the block, prefix-stripped; contains
    /// the root and the increment.
    pub range_norm: Vec<Word>,
    /// Normalized displacement: starts in the opposite factor, ends with g.
    pub increment: Word,
    /// Exact capacity contribution of the block; filled by the capacity
    /// solver, `None` straight out of the scan.
    pub exact_block_capacity: Option<f64>,
}

/// Scan of all regeneration times of one trajectory.
#[derive(Clone, Debug)]
pub struct RegenScan {
    pub g: Letter,
    /// Exit indices (k values) of confirmed regeneration levels.
    pub levels: Vec<u32>,
    /// Regeneration times `T_0, T_1, …` (confirmed only).
    pub times: Vec<u32>,
    pub blocks: Vec<RegenBlock>,
}

/// Find regeneration times and assemble blocks. The trailing unconfirmed
/// segment is always discarded; fewer than two confirmed regenerations yield
/// an empty block list.
pub fn regeneration_blocks(tr: &Trajectory, exits: &ExitRecord, g: Letter) -> Result<RegenScan, SimError> {
    if g.factor != Factor::One {
        return Err(SimError::Precondition(
            "the regeneration letter must belong to factor 1".to_string(),
        ));
    }
    let mut levels = Vec::new();
    let mut times = Vec::new();
    for e in exits.confirmed() {
        if e.letter == g && tr.first_visit_of(e.node) == e.time {
            levels.push(e.k);
            times.push(e.time);
        }
    }
    let mut blocks = Vec::new();
    for i in 1..times.len() {
        let (t0, t1) = (times[i - 1] as usize, times[i] as usize);
        let anchor = tr.node_at(t0);
        let anchor_depth = tr.depth_of(anchor);
        let mut range_norm: Vec<Word> = tr
            .window_nodes(t0, t1)
            .into_iter()
            .map(|node| tr.suffix_of(node, anchor_depth))
            .collect();
        range_norm.sort();
        range_norm.dedup();
        let increment = tr.suffix_of(tr.node_at(t1), anchor_depth);
        debug_assert!(range_norm.contains(&Word::root()));
        debug_assert!(range_norm.contains(&increment));
        debug_assert_eq!(increment.last(), Some(g));
        debug_assert_eq!(increment.first().map(|l| l.factor), Some(g.factor.other()));
        debug_assert!(range_norm.len() <= (t1 - t0) + 1);
        blocks.push(RegenBlock {
            index: i,
            duration: (t1 - t0) as u32,
            start_time: t0 as u32,
            end_time: t1 as u32,
            range_norm,
            increment,
            exact_block_capacity: None,
        });
    }
    Ok(RegenScan { g, levels, times, blocks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_word_compact;
    use crate::fixtures;

    #[test]
    fn same_seed_same_trajectory() {
        let fp = fixtures::example_a();
        let seed = WalkSeed { master: 11, stream: 2 };
        let a = run_walk(&fp, 500, seed);
        let b = run_walk(&fp, 500, seed);
        assert_eq!(a.steps, b.steps);
        let c = run_walk(&fp, 500, WalkSeed { master: 11, stream: 3 });
        assert_ne!(a.steps, c.steps);
    }

    #[test]
    fn ray_walk_never_repeats() {
        let fp = fixtures::ray();
        let tr = run_walk(&fp, 10, WalkSeed { master: 1, stream: 0 });
        // no revisits: every position is a fresh node
        let curve = tr.range_curve();
        assert_eq!(curve.last(), Some(&11));
        for (m, &c) in curve.iter().enumerate() {
            assert_eq!(c, m as u32 + 1);
        }
        // every step extends the word or advances within a level
        for m in 1..=10 {
            assert!(tr.norm_at(m) == tr.norm_at(m - 1) || tr.norm_at(m) == tr.norm_at(m - 1) + 1);
        }
    }

    #[test]
    fn range_curve_increments_are_zero_or_one() {
        let fp = fixtures::example_a();
        let tr = run_walk(&fp, 2000, WalkSeed { master: 5, stream: 7 });
        let curve = tr.range_curve();
        assert_eq!(curve[0], 1);
        for m in 1..curve.len() {
            let d = curve[m] - curve[m - 1];
            assert!(d <= 1);
        }
        assert!(*curve.last().unwrap() <= 2001);
    }

    #[test]
    fn hand_trajectory_exit_time() {
        // o → a → o → b → ba: the prefix "b" becomes final at time 3, not 1
        let fp = fixtures::example_a();
        let o = Word::root();
        let a = parse_word_compact(&fp, "1:a").unwrap();
        let b = parse_word_compact(&fp, "2:b").unwrap();
        // b has no outgoing edge back, so extend with the factor-1 letter
        let ba = parse_word_compact(&fp, "2:b/1:a").unwrap();
        let tr = replay_path(&fp, &[o, a, Word::root(), b, ba]).unwrap();
        let exits = exit_times(&tr, 0);
        assert_eq!(exits.exits[0].time, 3);
        assert_eq!(exits.exits[0].k, 1);
        assert_eq!(exits.exits[1].time, 4);
        // k(n) is nondecreasing
        let mut prev = 0;
        for n in 0..=tr.len() {
            let k = exits.k_of(n);
            assert!(k >= prev);
            prev = k;
        }
    }

    #[test]
    fn replay_rejects_impossible_steps() {
        let fp = fixtures::example_a();
        let o = Word::root();
        let b = parse_word_compact(&fp, "2:b").unwrap();
        // b → o has probability zero in this fixture
        assert!(matches!(replay_path(&fp, &[o, b, Word::root()]), Err(SimError::ImpossibleStep(2))));
    }

    #[test]
    fn exit_stack_matches_bruteforce_on_random_walks() {
        // oracle: e_k = first m with ‖X_m‖ = k whose cone holds to the horizon,
        // checked against both definitional readings
        let fp = fixtures::example_a();
        for stream in 0..8 {
            let tr = run_walk(&fp, 300, WalkSeed { master: 23, stream });
            let exits = exit_times(&tr, 0);
            let words: Vec<Word> = (0..=300).map(|m| tr.word_at(m)).collect();
            let n = words.len() - 1;
            let mut brute = Vec::new();
            let max_k = words[n].len();
            for k in 1..=max_k {
                let mut ek = None;
                for m in 1..=n {
                    if words[m].len() == k
                        && (m..=n).all(|j| words[m].is_prefix_of(&words[j]))
                    {
                        ek = Some(m);
                        break;
                    }
                }
                // the reading without the length clause: prefix constant
                let mut ek_loose = None;
                for m in 1..=n {
                    if words[m].len() >= k {
                        let p = words[m].prefix(k);
                        if (m..=n).all(|j| p.is_prefix_of(&words[j])) {
                            ek_loose = Some(m);
                            break;
                        }
                    }
                }
                assert_eq!(ek, ek_loose, "the two exit-time readings must agree");
                brute.push(ek.unwrap() as u32);
            }
            let got: Vec<u32> = exits.exits.iter().map(|e| e.time).collect();
            assert_eq!(got, brute);
        }
    }

    #[test]
    fn regeneration_blocks_have_the_right_shape() {
        let fp = fixtures::ray();
        let g = fp.g_default().unwrap();
        let tr = run_walk(&fp, 4000, WalkSeed { master: 9, stream: 1 });
        let exits = exit_times(&tr, 200);
        let scan = regeneration_blocks(&tr, &exits, g).unwrap();
        assert!(scan.blocks.len() > 10, "expected many regenerations, got {}", scan.blocks.len());
        for b in &scan.blocks {
            assert_eq!(b.increment.last(), Some(g));
            assert_eq!(b.increment.first().map(|l| l.factor), Some(Factor::Two));
            assert!(b.range_norm.len() as u32 <= b.duration + 1);
            assert!(b.range_norm.contains(&Word::root()));
        }
        // times strictly increase
        for w in scan.times.windows(2) {
            assert!(w[0] < w[1]);
        }
    }

    #[test]
    fn regeneration_requires_factor_one_letter() {
        let fp = fixtures::ray();
        let tr = run_walk(&fp, 100, WalkSeed { master: 2, stream: 0 });
        let exits = exit_times(&tr, 10);
        let bad = Letter::new(Factor::Two, 1).unwrap();
        assert!(regeneration_blocks(&tr, &exits, bad).is_err());
    }

    #[test]
    fn walk_throughput_smoke() {
        let fp = fixtures::example_a();
        let start = std::time::Instant::now();
        let tr = run_walk(&fp, 1_000_000, WalkSeed { master: 42, stream: 0 });
        let elapsed = start.elapsed();
        assert_eq!(tr.len(), 1_000_000);
        // budget: well under a second per million steps in release; allow
        // slack for debug/CI builds
        assert!(elapsed.as_secs() < 30, "walk took {elapsed:?}");
    }
}
