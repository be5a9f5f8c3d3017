//! Quality of a selection: Jaccard similarity between the selected objects
//! and the query, plus the per-step reward derived from it.

use crate::cube::{ObjectSet, QuerySet};

/// A quality function over selected object sets.
pub trait Quality {
    fn evaluate(&self, selected: &ObjectSet, query: &QuerySet) -> f64;
}

/// `|M ∩ Q| / |M ∪ Q|`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Relevance;

impl Quality for Relevance {
    fn evaluate(&self, selected: &ObjectSet, query: &QuerySet) -> f64 {
        relevance(selected, query)
    }
}

/// Jaccard similarity of the selected objects and the query. Equals 1 exactly
/// when the two sets coincide; 0 for an empty selection.
pub fn relevance(selected: &ObjectSet, query: &QuerySet) -> f64 {
    let q = query.ids();
    let inter = if selected.len() <= q.len() {
        selected.iter().filter(|o| q.contains(o)).count()
    } else {
        q.iter().filter(|o| selected.contains(o)).count()
    };
    let union = selected.len() + q.len() - inter;
    inter as f64 / union as f64
}

pub fn step_reward(q_prev: f64, q_next: f64) -> f64 {
    q_next - q_prev
}

/// Number of quality-function invocations made through [`EvalCounter::eval`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalCounter {
    count: u64,
}

impl EvalCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn eval<F: Quality + ?Sized>(&mut self, f: &F, selected: &ObjectSet, query: &QuerySet) -> f64 {
        self.count += 1;
        f.evaluate(selected, query)
    }

    pub fn relevance(&mut self, selected: &ObjectSet, query: &QuerySet) -> f64 {
        self.eval(&Relevance, selected, query)
    }

    /// Folds in a counter from a parallel worker.
    pub fn merge(&mut self, other: EvalCounter) {
        self.count += other.count;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::ObjectIdx;
    use proptest::prelude::*;

    fn set(ids: impl IntoIterator<Item = u32>) -> ObjectSet {
        ids.into_iter().map(ObjectIdx).collect()
    }

    fn query(ids: impl IntoIterator<Item = u32>) -> QuerySet {
        QuerySet::new(set(ids)).unwrap()
    }

    #[test]
    fn identities() {
        let q = query(0..7);
        assert_eq!(relevance(q.ids(), &q), 1.0);
        assert_eq!(relevance(&ObjectSet::new(), &q), 0.0);
        assert_eq!(relevance(&set(10..20), &q), 0.0);
    }

    #[test]
    fn quarter_by_enumeration() {
        // M = 0..15, Q = 10..15 ∪ 100..105: |M∩Q| = 5, |M∪Q| = 20
        let m = set(0..15);
        let q = query((10..15).chain(100..105));
        let inter = m.iter().filter(|o| q.contains(**o)).count();
        let union: ObjectSet = m.union(q.ids()).copied().collect();
        assert_eq!((inter, union.len()), (5, 20));
        assert_eq!(relevance(&m, &q), 0.25);
    }

    #[test]
    fn rewards() {
        assert!((step_reward(0.3, 0.5) - 0.2).abs() < 1e-15);
        assert_eq!(step_reward(0.42, 0.42), 0.0);
    }

    #[test]
    fn counter_counts_each_call() {
        let q = query(0..3);
        let mut c = EvalCounter::new();
        for i in 0..5u64 {
            assert_eq!(c.count(), i);
            c.relevance(&set(0..2), &q);
        }
        let mut other = EvalCounter::new();
        other.relevance(&set(0..1), &q);
        c.merge(other);
        assert_eq!(c.count(), 6);
    }

    proptest! {
        #[test]
        fn range_and_optimum(m in prop::collection::btree_set(0u32..40, 0..30),
                             q in prop::collection::btree_set(0u32..40, 1..30)) {
            let ms = set(m.iter().copied());
            let qs = query(q.iter().copied());
            let r = relevance(&ms, &qs);
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert_eq!(r == 1.0, m == q);
        }

        #[test]
        fn telescoping(steps in prop::collection::vec(prop::collection::btree_set(0u32..60, 0..12), 1..10),
                       q in prop::collection::btree_set(0u32..60, 1..20)) {
            let qs = query(q);
            let mut m = ObjectSet::new();
            let mut prev = relevance(&m, &qs);
            let mut total = 0.0;
            for s in steps {
                m.extend(s.into_iter().map(ObjectIdx));
                let next = relevance(&m, &qs);
                total += step_reward(prev, next);
                prev = next;
            }
            prop_assert!((total - prev).abs() <= 1e-12);
        }
    }
}
