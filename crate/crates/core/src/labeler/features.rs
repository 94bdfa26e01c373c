use std::collections::HashMap;

/// Observation features of position `k`: bias, word, lowercased word,
/// prefixes and suffixes up to three characters, digit and capitalization
/// flags, and lowercased words at offsets -2..=2.
pub fn token_features(words: &[&str], k: usize) -> Vec<String> {
    let w = words[k];
    let lower = w.to_lowercase();
    let chars: Vec<char> = w.chars().collect();
    let mut out = vec!["bias".to_string(), format!("w={w}"), format!("lw={lower}")];
    for n in 1..=3.min(chars.len()) {
        out.push(format!("p{n}={}", chars[..n].iter().collect::<String>()));
        out.push(format!("s{n}={}", chars[chars.len() - n..].iter().collect::<String>()));
    }
    if chars.iter().any(|c| c.is_ascii_digit()) {
        out.push("digit".into());
    }
    if chars.first().is_some_and(|c| c.is_uppercase()) {
        out.push("cap".into());
    }
    for off in [-2isize, -1, 1, 2] {
        let j = k as isize + off;
        let ctx = if j < 0 {
            "<s>".to_string()
        } else if j as usize >= words.len() {
            "</s>".to_string()
        } else {
            words[j as usize].to_lowercase()
        };
        out.push(format!("w{off:+}={ctx}"));
    }
    out
}

/// Injective feature-name to index map, filled in first-seen order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureIndex {
    names: Vec<String>,
    map: HashMap<String, u32>,
}

impl FeatureIndex {
    pub fn from_names(names: Vec<String>) -> Option<Self> {
        let map: HashMap<String, u32> = names.iter().enumerate().map(|(i, n)| (n.clone(), i as u32)).collect();
        (map.len() == names.len()).then_some(FeatureIndex { names, map })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.map.get(name).copied()
    }

    pub fn intern(&mut self, name: String) -> u32 {
        if let Some(&i) = self.map.get(&name) {
            return i;
        }
        let i = self.names.len() as u32;
        self.map.insert(name.clone(), i);
        self.names.push(name);
        i
    }

    /// Feature ids of every position, growing the index.
    pub fn featurize_mut(&mut self, words: &[&str]) -> Vec<Vec<u32>> {
        (0..words.len())
            .map(|k| token_features(words, k).into_iter().map(|f| self.intern(f)).collect())
            .collect()
    }

    /// Feature ids of every position; unknown features are dropped.
    pub fn featurize(&self, words: &[&str]) -> Vec<Vec<u32>> {
        (0..words.len())
            .map(|k| token_features(words, k).iter().filter_map(|f| self.get(f)).collect())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates() {
        let f = token_features(&["The", "B52", "flew"], 1);
        for want in ["bias", "w=B52", "lw=b52", "p1=B", "p3=B52", "s2=52", "digit", "cap", "w-2=<s>", "w-1=the", "w+1=flew", "w+2=</s>"] {
            assert!(f.contains(&want.to_string()), "missing {want}: {f:?}");
        }
        let short = token_features(&["a"], 0);
        assert!(short.contains(&"p1=a".to_string()) && !short.iter().any(|s| s.starts_with("p2=")));
    }

    #[test]
    fn featurization_is_pure_and_unknowns_drop() {
        let mut idx = FeatureIndex::default();
        let a = idx.featurize_mut(&["dog", "runs"]);
        let b = idx.featurize_mut(&["dog", "runs"]);
        assert_eq!(a, b);
        let n = idx.len();
        let c = idx.featurize(&["cat", "runs"]);
        assert_eq!(idx.len(), n);
        assert!(c[0].len() < a[0].len());
        assert!(FeatureIndex::from_names(vec!["x".into(), "x".into()]).is_none());
    }
}
