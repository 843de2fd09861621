use std::collections::{BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Category hierarchy with pages attached to categories.
///
/// JSON form: `{"categories": [..], "pages": [..], "subcat_edges": [[parent,
/// child], ..], "page_edges": [[category, page], ..]}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryGraph {
    pub categories: Vec<String>,
    pub pages: Vec<String>,
    #[serde(default)]
    pub subcat_edges: Vec<(String, String)>,
    #[serde(default)]
    pub page_edges: Vec<(String, String)>,
}

impl CategoryGraph {
    pub fn from_json(json: &str) -> Result<Self> {
        let g: CategoryGraph = serde_json::from_str(json).map_err(|e| Error::ParseError {
            line: e.line(),
            message: e.to_string(),
        })?;
        g.validate()?;
        Ok(g)
    }

    /// Every edge must reference declared nodes.
    pub fn validate(&self) -> Result<()> {
        let cats: BTreeSet<&str> = self.categories.iter().map(String::as_str).collect();
        let pages: BTreeSet<&str> = self.pages.iter().map(String::as_str).collect();
        for (a, b) in &self.subcat_edges {
            for c in [a, b] {
                if !cats.contains(c.as_str()) {
                    return Err(Error::UnknownNode(c.clone()));
                }
            }
        }
        for (c, p) in &self.page_edges {
            if !cats.contains(c.as_str()) {
                return Err(Error::UnknownNode(c.clone()));
            }
            if !pages.contains(p.as_str()) {
                return Err(Error::UnknownNode(p.clone()));
            }
        }
        Ok(())
    }

    pub fn has_category(&self, name: &str) -> bool {
        self.categories.iter().any(|c| c == name)
    }
}

/// Pages reachable from `roots` within `max_depth` subcategory hops.
///
/// Breadth-first from the roots (depth 0); each category is expanded once,
/// at the shallowest depth it is reached, so cycles terminate.
pub fn select_pages(
    graph: &CategoryGraph,
    roots: &[String],
    max_depth: usize,
) -> Result<BTreeSet<String>> {
    let mut children: HashMap<&str, Vec<&str>> = HashMap::new();
    for (parent, child) in &graph.subcat_edges {
        children.entry(parent).or_default().push(child);
    }
    let mut pages_of: HashMap<&str, Vec<&str>> = HashMap::new();
    for (cat, page) in &graph.page_edges {
        pages_of.entry(cat).or_default().push(page);
    }

    let mut depth_of: HashMap<&str, usize> = HashMap::new();
    let mut queue = VecDeque::new();
    for r in roots {
        if !graph.has_category(r) {
            return Err(Error::UnknownRoot(r.clone()));
        }
        if depth_of.insert(r.as_str(), 0).is_none() {
            queue.push_back(r.as_str());
        }
    }
    let mut selected = BTreeSet::new();
    while let Some(cat) = queue.pop_front() {
        let depth = depth_of[cat];
        if let Some(pages) = pages_of.get(cat) {
            selected.extend(pages.iter().map(|p| p.to_string()));
        }
        if depth == max_depth {
            continue;
        }
        for &child in children.get(cat).map(Vec::as_slice).unwrap_or_default() {
            if !depth_of.contains_key(child) {
                depth_of.insert(child, depth + 1);
                queue.push_back(child);
            }
        }
    }
    Ok(selected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &str) -> String {
        v.to_string()
    }

    fn chain() -> CategoryGraph {
        CategoryGraph {
            categories: vec![s("Root"), s("C1"), s("C2")],
            pages: vec![s("p0"), s("p1"), s("p2")],
            subcat_edges: vec![(s("Root"), s("C1")), (s("C1"), s("C2"))],
            page_edges: vec![(s("Root"), s("p0")), (s("C1"), s("p1")), (s("C2"), s("p2"))],
        }
    }

    #[test]
    fn depth_bound() {
        let got = select_pages(&chain(), &[s("Root")], 1).unwrap();
        assert_eq!(got, BTreeSet::from([s("p0"), s("p1")]));
        assert_eq!(select_pages(&chain(), &[s("Root")], 0).unwrap().len(), 1);
        assert_eq!(select_pages(&chain(), &[s("Root")], 5).unwrap().len(), 3);
    }

    #[test]
    fn cycles_terminate() {
        let mut g = chain();
        g.subcat_edges.push((s("C1"), s("Root")));
        let got = select_pages(&g, &[s("Root")], 10).unwrap();
        assert_eq!(got.len(), 3);
    }

    #[test]
    fn unknown_root() {
        assert!(matches!(
            select_pages(&chain(), &[s("Nope")], 3),
            Err(Error::UnknownRoot(_))
        ));
    }

    #[test]
    fn dangling_edges_rejected() {
        let mut g = chain();
        g.page_edges.push((s("C2"), s("ghost")));
        assert!(matches!(g.validate(), Err(Error::UnknownNode(n)) if n == "ghost"));
    }

    #[test]
    fn json_shape() {
        let json = r#"{"categories":["Root","C1"],"pages":["p"],"subcat_edges":[["Root","C1"]],"page_edges":[["C1","p"]]}"#;
        let g = CategoryGraph::from_json(json).unwrap();
        assert_eq!(select_pages(&g, &[s("Root")], 1).unwrap().len(), 1);
    }
}
