//! The six-label temporal relation algebra.
//!
//! Labels are interpreted over integer-endpoint intervals with strict
//! comparisons; configurations the six-label scheme cannot express
//! (overlap, meets, starts/finishes) map to `Vague`. The transitivity
//! composition table is computed by brute-force enumeration of interval
//! triples rather than transcribed by hand.

use serde::{Deserialize, Serialize};
use std::fmt;

/// A temporal relation label between two events.
///
/// The declaration order is the fixed canonical order used everywhere for
/// tie-breaking and rendering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelLabel {
    Before,
    After,
    Includes,
    IsIncluded,
    Simultaneous,
    Vague,
}

pub const LABEL_COUNT: usize = 6;

/// All six labels in canonical order.
pub const ALL_LABELS: [RelLabel; LABEL_COUNT] = [
    RelLabel::Before,
    RelLabel::After,
    RelLabel::Includes,
    RelLabel::IsIncluded,
    RelLabel::Simultaneous,
    RelLabel::Vague,
];

impl RelLabel {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<RelLabel> {
        ALL_LABELS.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            RelLabel::Before => "before",
            RelLabel::After => "after",
            RelLabel::Includes => "includes",
            RelLabel::IsIncluded => "is_included",
            RelLabel::Simultaneous => "simultaneous",
            RelLabel::Vague => "vague",
        }
    }

    pub fn from_name(name: &str) -> Option<RelLabel> {
        ALL_LABELS.iter().copied().find(|l| l.name() == name)
    }

    /// True for the five labels that assert a definite relation.
    pub fn is_definite(self) -> bool {
        self != RelLabel::Vague
    }

    /// Rank used for breaking score and objective ties: the least committal
    /// label wins, so vague ranks first and before last.
    pub fn tie_rank(self) -> usize {
        LABEL_COUNT - 1 - self.index()
    }

    /// The label seen from the opposite edge orientation.
    ///
    /// Swaps before/after and includes/is_included; simultaneous and vague
    /// are self-inverse. This is an involution.
    pub fn inverse(self) -> RelLabel {
        match self {
            RelLabel::Before => RelLabel::After,
            RelLabel::After => RelLabel::Before,
            RelLabel::Includes => RelLabel::IsIncluded,
            RelLabel::IsIncluded => RelLabel::Includes,
            RelLabel::Simultaneous => RelLabel::Simultaneous,
            RelLabel::Vague => RelLabel::Vague,
        }
    }
}

impl fmt::Display for RelLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A subset of the six labels, packed into a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelSet(u8);

impl LabelSet {
    pub const EMPTY: LabelSet = LabelSet(0);
    pub const FULL: LabelSet = LabelSet(0b11_1111);

    pub fn singleton(l: RelLabel) -> LabelSet {
        LabelSet(1 << l.index())
    }

    pub fn contains(self, l: RelLabel) -> bool {
        self.0 & (1 << l.index()) != 0
    }

    pub fn insert(&mut self, l: RelLabel) {
        self.0 |= 1 << l.index();
    }

    pub fn union(self, other: LabelSet) -> LabelSet {
        LabelSet(self.0 | other.0)
    }

    pub fn intersect(self, other: LabelSet) -> LabelSet {
        LabelSet(self.0 & other.0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = RelLabel> {
        ALL_LABELS.into_iter().filter(move |l| self.contains(*l))
    }

    /// The set with every member replaced by its inverse.
    pub fn inverse(self) -> LabelSet {
        let mut out = LabelSet::EMPTY;
        for l in self.iter() {
            out.insert(l.inverse());
        }
        out
    }
}

impl FromIterator<RelLabel> for LabelSet {
    fn from_iter<T: IntoIterator<Item = RelLabel>>(iter: T) -> LabelSet {
        let mut s = LabelSet::EMPTY;
        for l in iter {
            s.insert(l);
        }
        s
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (n, l) in self.iter().enumerate() {
            if n > 0 {
                write!(f, ",")?;
            }
            write!(f, "{l}")?;
        }
        write!(f, "}}")
    }
}

/// An event interval on an integer grid. Events have positive duration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interval {
    pub start: i64,
    pub end: i64,
}

impl Interval {
    /// Panics if `start >= end`.
    pub fn new(start: i64, end: i64) -> Interval {
        assert!(start < end, "degenerate interval [{start},{end}]");
        Interval { start, end }
    }
}

/// The relation of `a` to `b` under strict endpoint comparisons.
///
/// Touching, overlapping and partially-equal configurations are not
/// representable in the six-label scheme and map to `Vague`.
pub fn oracle_relation(a: Interval, b: Interval) -> RelLabel {
    debug_assert!(a.start < a.end && b.start < b.end);
    if a.end < b.start {
        RelLabel::Before
    } else if b.end < a.start {
        RelLabel::After
    } else if a.start == b.start && a.end == b.end {
        RelLabel::Simultaneous
    } else if a.start < b.start && b.end < a.end {
        RelLabel::Includes
    } else if b.start < a.start && a.end < b.end {
        RelLabel::IsIncluded
    } else {
        RelLabel::Vague
    }
}

/// The general-transitivity map `(r1, r2) -> {r3}`: the labels permissible
/// on (i,k) given r1 on (i,j) and r2 on (j,k).
///
/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompositionTable {
    entries: [[LabelSet; LABEL_COUNT]; LABEL_COUNT],
}

impl CompositionTable {
    pub fn compose(&self, r1: RelLabel, r2: RelLabel) -> LabelSet {
        self.entries[r1.index()][r2.index()]
    }

    /// Whether a fully labeled triangle (i,j), (j,k), (i,k) is jointly
    /// consistent: every path composition admits the third label.
    pub fn triangle_consistent(&self, r_ij: RelLabel, r_jk: RelLabel, r_ik: RelLabel) -> bool {
        self.compose(r_ij, r_jk).contains(r_ik)
            && self.compose(r_ij.inverse(), r_ik).contains(r_jk)
            && self.compose(r_ik, r_jk.inverse()).contains(r_ij)
    }
}

/// Builds the 36-entry composition table by enumerating interval triples
/// with endpoints in `[0, grid_max]`.
///
/// Entries with a vague input are the full set: a vague edge imposes no
/// constraint. For definite pairs the entry collects every relation of
/// (A, C) realizable by intervals with oracle(A,B)=r1 and oracle(B,C)=r2.
pub fn build_composition_table(grid_max: i64) -> CompositionTable {
    assert!(grid_max >= 8, "grid_max must be at least 8");
    let mut intervals = Vec::new();
    for s in 0..grid_max {
        for e in (s + 1)..=grid_max {
            intervals.push(Interval { start: s, end: e });
        }
    }

    let mut entries = [[LabelSet::EMPTY; LABEL_COUNT]; LABEL_COUNT];

    // Precompute pairwise relations so the triple loop is table lookups.
    let n = intervals.len();
    let mut relation = vec![vec![RelLabel::Vague; n]; n];
    for (ia, a) in intervals.iter().enumerate() {
        for (ib, b) in intervals.iter().enumerate() {
            relation[ia][ib] = oracle_relation(*a, *b);
        }
    }

    for ia in 0..n {
        for ib in 0..n {
            let r1 = relation[ia][ib];
            if r1 == RelLabel::Vague {
                continue;
            }
            for ic in 0..n {
                let r2 = relation[ib][ic];
                if r2 == RelLabel::Vague {
                    continue;
                }
                entries[r1.index()][r2.index()].insert(relation[ia][ic]);
            }
        }
    }

    for r in ALL_LABELS {
        entries[RelLabel::Vague.index()][r.index()] = LabelSet::FULL;
        entries[r.index()][RelLabel::Vague.index()] = LabelSet::FULL;
    }

    CompositionTable { entries }
}

/// Renders the table as a fixed-order text matrix (one line per (r1, r2)).
pub fn render_table(t: &CompositionTable) -> String {
    let mut out = String::new();
    for r1 in ALL_LABELS {
        for r2 in ALL_LABELS {
            out.push_str(&format!("{:<13}{:<13}{}\n", r1, r2, t.compose(r1, r2)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use RelLabel::*;

    #[test]
    fn inverse_is_involution() {
        for l in ALL_LABELS {
            assert_eq!(l.inverse().inverse(), l);
        }
        assert_eq!(Before.inverse(), After);
        assert_eq!(Vague.inverse(), Vague);
        assert_eq!(IsIncluded.inverse(), Includes);
    }

    #[test]
    fn label_names_round_trip() {
        for l in ALL_LABELS {
            assert_eq!(RelLabel::from_name(l.name()), Some(l));
            let json = serde_json::to_string(&l).unwrap();
            let back: RelLabel = serde_json::from_str(&json).unwrap();
            assert_eq!(back, l);
        }
        assert_eq!(RelLabel::from_name("overlaps"), None);
    }

    #[test]
    fn oracle_basic_cases() {
        let iv = Interval::new;
        assert_eq!(oracle_relation(iv(0, 2), iv(3, 5)), Before);
        assert_eq!(oracle_relation(iv(3, 5), iv(0, 2)), After);
        assert_eq!(oracle_relation(iv(0, 5), iv(1, 3)), Includes);
        assert_eq!(oracle_relation(iv(1, 3), iv(0, 5)), IsIncluded);
        assert_eq!(oracle_relation(iv(1, 3), iv(1, 3)), Simultaneous);
        // Overlap, meets, shared endpoints: all unrepresentable.
        assert_eq!(oracle_relation(iv(0, 3), iv(2, 5)), Vague);
        assert_eq!(oracle_relation(iv(0, 2), iv(2, 5)), Vague);
        assert_eq!(oracle_relation(iv(0, 3), iv(0, 5)), Vague);
    }

    #[test]
    #[should_panic]
    fn degenerate_interval_rejected() {
        Interval::new(3, 3);
    }

    #[test]
    fn oracle_antisymmetry() {
        let mut ivs = Vec::new();
        for s in 0..6 {
            for e in (s + 1)..=6 {
                ivs.push(Interval::new(s, e));
            }
        }
        for &a in &ivs {
            for &b in &ivs {
                assert_eq!(oracle_relation(a, b).inverse(), oracle_relation(b, a));
            }
        }
    }

    #[test]
    fn table_spot_entries() {
        let t = build_composition_table(8);
        assert_eq!(t.compose(Before, Before), LabelSet::singleton(Before));
        assert_eq!(t.compose(After, After), LabelSet::singleton(After));
        assert_eq!(
            t.compose(Includes, Before),
            [Before, Includes, Vague].into_iter().collect()
        );
        assert_eq!(t.compose(Before, After), LabelSet::FULL);
        assert_eq!(t.compose(Before, Vague), LabelSet::FULL);
        assert_eq!(t.compose(Vague, Simultaneous), LabelSet::FULL);
    }

    #[test]
    fn simultaneous_is_identity() {
        let t = build_composition_table(8);
        for r in ALL_LABELS.into_iter().filter(|r| r.is_definite()) {
            assert_eq!(t.compose(Simultaneous, r), LabelSet::singleton(r));
            assert_eq!(t.compose(r, Simultaneous), LabelSet::singleton(r));
        }
    }

    #[test]
    fn every_entry_nonempty_and_shaped() {
        let t = build_composition_table(8);
        for r1 in ALL_LABELS {
            for r2 in ALL_LABELS {
                let e = t.compose(r1, r2);
                assert!(!e.is_empty(), "empty entry at ({r1},{r2})");
                if r1.is_definite() && r2.is_definite() {
                    assert!(
                        e.contains(Vague) || (e.len() == 1 && e.iter().next().unwrap().is_definite()),
                        "entry ({r1},{r2})={e} neither contains vague nor is a definite singleton"
                    );
                }
            }
        }
    }

    #[test]
    fn table_saturates_at_grid_8() {
        assert_eq!(build_composition_table(8), build_composition_table(12));
    }

    #[test]
    fn mirror_property() {
        let t = build_composition_table(8);
        for r1 in ALL_LABELS {
            for r2 in ALL_LABELS {
                assert_eq!(
                    t.compose(r2.inverse(), r1.inverse()),
                    t.compose(r1, r2).inverse(),
                    "mirror failed at ({r1},{r2})"
                );
            }
        }
    }

    #[test]
    fn all_vague_triangle_is_consistent() {
        let t = build_composition_table(8);
        assert!(t.triangle_consistent(Vague, Vague, Vague));
    }
}
