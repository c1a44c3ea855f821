use std::fmt;

use serde::{Deserialize, Serialize};

use super::predicate::{write_predicate, Predicate, Term};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColumnName {
    pub qualifier: Option<String>,
    pub name: String,
}

impl ColumnName {
    pub fn bare(name: impl Into<String>) -> Self {
        ColumnName {
            qualifier: None,
            name: name.into(),
        }
    }

    pub fn qualified(qualifier: impl Into<String>, name: impl Into<String>) -> Self {
        ColumnName {
            qualifier: Some(qualifier.into()),
            name: name.into(),
        }
    }
}

impl fmt::Display for ColumnName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.qualifier {
            Some(q) => write!(f, "{q}.{}", self.name),
            None => f.write_str(&self.name),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SelectItem {
    Column(ColumnName),
    /// `alias.*`
    TableStar(String),
    /// The constant `1` (existence queries).
    One,
    /// `COUNT(*)`
    CountStar,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SelectList {
    Star,
    Items(Vec<SelectItem>),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TableRef {
    pub table: String,
    pub alias: Option<String>,
}

impl TableRef {
    /// Name this table is referred to by inside the query.
    pub fn binding(&self) -> &str {
        self.alias.as_deref().unwrap_or(&self.table)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum JoinKind {
    Inner,
    Left,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JoinClause {
    pub kind: JoinKind,
    pub table: TableRef,
    pub on: (ColumnName, ColumnName),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QueryShape {
    Psj,
    InnerJoin,
    LeftJoin,
    CountAggregate,
    ExistenceLimit1,
}

impl fmt::Display for QueryShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QueryShape::Psj => "project-select-join",
            QueryShape::InnerJoin => "inner join",
            QueryShape::LeftJoin => "left join",
            QueryShape::CountAggregate => "count aggregate",
            QueryShape::ExistenceLimit1 => "limit 1",
        })
    }
}

/// A parsed query in the supported SQL subset.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QueryAst {
    pub select: SelectList,
    pub distinct: bool,
    pub from: Vec<TableRef>,
    pub joins: Vec<JoinClause>,
    pub filter: Predicate<ColumnName>,
    pub limit_one: bool,
}

impl QueryAst {
    pub fn shape(&self) -> QueryShape {
        let count = matches!(&self.select, SelectList::Items(items) if items.contains(&SelectItem::CountStar));
        if self.joins.iter().any(|j| j.kind == JoinKind::Left) {
            QueryShape::LeftJoin
        } else if count {
            QueryShape::CountAggregate
        } else if self.limit_one {
            QueryShape::ExistenceLimit1
        } else if !self.joins.is_empty() {
            QueryShape::InnerJoin
        } else {
            QueryShape::Psj
        }
    }

    pub fn placeholder_count(&self) -> usize {
        self.filter
            .scalars()
            .into_iter()
            .filter(|s| matches!(s, super::Scalar::Placeholder(_)))
            .count()
    }

    /// All table references, FROM list first, then joined tables.
    pub fn table_refs(&self) -> impl Iterator<Item = &TableRef> {
        self.from.iter().chain(self.joins.iter().map(|j| &j.table))
    }
}

impl fmt::Display for QueryAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SELECT ")?;
        if self.distinct {
            f.write_str("DISTINCT ")?;
        }
        match &self.select {
            SelectList::Star => f.write_str("*")?,
            SelectList::Items(items) => {
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    match item {
                        SelectItem::Column(c) => write!(f, "{c}")?,
                        SelectItem::TableStar(t) => write!(f, "{t}.*")?,
                        SelectItem::One => f.write_str("1")?,
                        SelectItem::CountStar => f.write_str("COUNT(*)")?,
                    }
                }
            }
        }
        f.write_str(" FROM ")?;
        for (i, t) in self.from.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write_table_ref(f, t)?;
        }
        for j in &self.joins {
            f.write_str(match j.kind {
                JoinKind::Inner => " INNER JOIN ",
                JoinKind::Left => " LEFT JOIN ",
            })?;
            write_table_ref(f, &j.table)?;
            write!(f, " ON {} = {}", j.on.0, j.on.1)?;
        }
        if self.filter != Predicate::True {
            f.write_str(" WHERE ")?;
            write_predicate(
                f,
                &self.filter,
                &|t: &Term<ColumnName>, f| write!(f, "{t}"),
                " AND ",
            )?;
        }
        if self.limit_one {
            f.write_str(" LIMIT 1")?;
        }
        Ok(())
    }
}

fn write_table_ref(f: &mut fmt::Formatter<'_>, t: &TableRef) -> fmt::Result {
    f.write_str(&t.table)?;
    if let Some(a) = &t.alias {
        write!(f, " {a}")?;
    }
    Ok(())
}
