use serde::{Deserialize, Serialize};

/// Levenshtein distance (unit-cost insertions, deletions, substitutions)
/// with a two-row table.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Levenshtein distance divided by the longer length; zero for two empty
/// sequences.
pub fn normalized_edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        0.0
    } else {
        levenshtein(a, b) as f64 / longest as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffFlag {
    Same,
    Changed,
}

/// Per-position flags for `other` against `factual`: equal tokens at the
/// same position are `Same`, everything else (including the tail beyond the
/// shorter sequence) is `Changed`.
pub fn positional_diff<T: PartialEq>(factual: &[T], other: &[T]) -> Vec<DiffFlag> {
    other
        .iter()
        .enumerate()
        .map(|(i, t)| match factual.get(i) {
            Some(f) if f == t => DiffFlag::Same,
            _ => DiffFlag::Changed,
        })
        .collect()
}

/// Flags for `other` from a minimum-edit alignment with `factual`: tokens
/// matched without substitution are `Same`.
pub fn alignment_diff<T: PartialEq>(factual: &[T], other: &[T]) -> Vec<DiffFlag> {
    let (n, m) = (factual.len(), other.len());
    let mut table = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in table.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        table[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = table[i - 1][j - 1] + usize::from(factual[i - 1] != other[j - 1]);
            table[i][j] = sub.min(table[i - 1][j] + 1).min(table[i][j - 1] + 1);
        }
    }
    let mut flags = vec![DiffFlag::Changed; m];
    let (mut i, mut j) = (n, m);
    while i > 0 && j > 0 {
        let same = factual[i - 1] == other[j - 1];
        if table[i][j] == table[i - 1][j - 1] + usize::from(!same) {
            if same {
                flags[j - 1] = DiffFlag::Same;
            }
            i -= 1;
            j -= 1;
        } else if table[i][j] == table[i - 1][j] + 1 {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    flags
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chars(s: &str) -> Vec<char> {
        s.chars().collect()
    }

    #[test]
    fn examples() {
        assert_eq!(normalized_edit_distance(&chars("abc"), &chars("abc")), 0.0);
        assert_eq!(normalized_edit_distance(&chars("abc"), &chars("xyz")), 1.0);
        assert_eq!(normalized_edit_distance::<u8>(&[], &[]), 0.0);
        assert_eq!(normalized_edit_distance(&[], &[1]), 1.0);
        let d = normalized_edit_distance(&chars("kitten"), &chars("sitting"));
        assert_eq!(d, 3.0 / 7.0);
    }

    #[test]
    fn positional_flags() {
        use DiffFlag::*;
        assert_eq!(positional_diff(&[1, 2, 3], &[1, 5, 3, 4]), [Same, Changed, Same, Changed]);
        assert_eq!(positional_diff(&[1, 2, 3], &[1, 2]), [Same, Same]);
    }

    #[test]
    fn alignment_flags_survive_shifts() {
        use DiffFlag::*;
        // an insertion shifts every later position, the alignment does not
        assert_eq!(positional_diff(&[1, 2, 3], &[9, 1, 2, 3]), [Changed; 4]);
        assert_eq!(alignment_diff(&[1, 2, 3], &[9, 1, 2, 3]), [Changed, Same, Same, Same]);
    }

    proptest! {
        #[test]
        fn metric_properties(a in prop::collection::vec(0u8..4, 0..12), b in prop::collection::vec(0u8..4, 0..12), c in prop::collection::vec(0u8..4, 0..12)) {
            let ab = levenshtein(&a, &b);
            prop_assert_eq!(ab, levenshtein(&b, &a));
            prop_assert_eq!(ab == 0, a == b);
            prop_assert!(levenshtein(&a, &c) <= ab + levenshtein(&b, &c));
            let d = normalized_edit_distance(&a, &b);
            prop_assert!((0.0..=1.0).contains(&d));
        }

        #[test]
        fn alignment_same_count_matches_distance(a in prop::collection::vec(0u8..3, 0..10), b in prop::collection::vec(0u8..3, 0..10)) {
            // matched tokens = |b| - insertions - substitutions
            let same = alignment_diff(&a, &b).iter().filter(|f| **f == DiffFlag::Same).count();
            prop_assert!(same + levenshtein(&a, &b) >= b.len());
            prop_assert!(same <= a.len().min(b.len()));
        }
    }
}
