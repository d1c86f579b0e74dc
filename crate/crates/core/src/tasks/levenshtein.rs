/// Unit-cost edit distance (insert, delete, substitute) in two rows of memory.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
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

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn full_matrix(a: &[u8], b: &[u8]) -> usize {
        let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in d.iter_mut().enumerate() {
            row[0] = i;
        }
        for j in 0..=b.len() {
            d[0][j] = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let cost = usize::from(a[i - 1] != b[j - 1]);
                d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
            }
        }
        d[a.len()][b.len()]
    }

    #[test]
    fn examples() {
        assert_eq!(levenshtein(b"ACGT", b"ACGT"), 0);
        assert_eq!(levenshtein(b"ACGT", b"AGT"), 1);
        assert_eq!(levenshtein(b"", b"ACG"), 3);
        assert_eq!(levenshtein(b"kitten", b"sitting"), 3);
    }

    fn dna(max: usize) -> impl Strategy<Value = Vec<u8>> {
        proptest::collection::vec(prop::sample::select(b"ACGT".to_vec()), 0..=max)
    }

    proptest! {
        #[test]
        fn matches_full_matrix(a in dna(64), b in dna(64)) {
            prop_assert_eq!(levenshtein(&a, &b), full_matrix(&a, &b));
        }

        #[test]
        fn axioms(a in dna(24), b in dna(24), c in dna(24)) {
            prop_assert_eq!(levenshtein(&a, &a), 0);
            prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
            prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
            prop_assert!(levenshtein(&a, &b) <= a.len().max(b.len()));
        }

        #[test]
        fn prefix_distance(a in dna(30), n in 0usize..30) {
            let p = &a[..n.min(a.len())];
            prop_assert_eq!(levenshtein(&a, p), a.len() - p.len());
        }
    }
}
