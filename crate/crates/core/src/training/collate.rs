use crate::error::{Error, Result};
use crate::tokenizer::{TokenId, PAD};

/// Right-padded batch. Masks are true on real tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub inputs: Vec<Vec<TokenId>>,
    pub input_mask: Vec<Vec<bool>>,
    pub targets: Vec<Vec<TokenId>>,
    pub target_mask: Vec<Vec<bool>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Unpadded input and target of example `i`.
    pub fn example(&self, i: usize) -> (&[TokenId], &[TokenId]) {
        let n_in = self.input_mask[i].iter().filter(|&&m| m).count();
        let n_out = self.target_mask[i].iter().filter(|&&m| m).count();
        (&self.inputs[i][..n_in], &self.targets[i][..n_out])
    }
}

fn pad(rows: &[&[TokenId]], max: usize) -> (Vec<Vec<TokenId>>, Vec<Vec<bool>>) {
    let width = rows.iter().map(|r| r.len().min(max)).max().unwrap_or(0);
    rows.iter()
        .map(|r| {
            let n = r.len().min(max);
            let mut ids = r[..n].to_vec();
            ids.resize(width, PAD);
            let mask = (0..width).map(|j| j < n).collect();
            (ids, mask)
        })
        .unzip()
}

pub fn collate(examples: &[(Vec<TokenId>, Vec<TokenId>)], max_in: usize, max_out: usize) -> Result<Batch> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("cannot collate an empty batch".into()));
    }
    let ins: Vec<&[TokenId]> = examples.iter().map(|(i, _)| i.as_slice()).collect();
    let outs: Vec<&[TokenId]> = examples.iter().map(|(_, o)| o.as_slice()).collect();
    let (inputs, input_mask) = pad(&ins, max_in);
    let (targets, target_mask) = pad(&outs, max_out);
    Ok(Batch {
        inputs,
        input_mask,
        targets,
        target_mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pads_and_truncates() {
        let ex = vec![(vec![1, 2, 3], vec![4]), (vec![1, 2, 3, 4, 5], vec![4, 5])];
        let b = collate(&ex, 5, 5).unwrap();
        assert_eq!(b.inputs[0], vec![1, 2, 3, PAD, PAD]);
        assert_eq!(b.input_mask[0], vec![true, true, true, false, false]);
        assert_eq!(b.inputs.len(), 2);
        assert_eq!(b.example(0), (&[1, 2, 3][..], &[4][..]));

        let long = vec![((0..10).collect::<Vec<TokenId>>(), vec![1])];
        let b = collate(&long, 5, 5).unwrap();
        assert_eq!(b.inputs[0].len(), 5);
        assert!(collate(&[], 5, 5).is_err());
    }
}
