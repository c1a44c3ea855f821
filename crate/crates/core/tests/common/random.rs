//! Random small schemas, views and queries for the oracle comparisons.

use polext::relational::Interner;
use polext::schema::{generate_constraints, ColumnType};
use polext::{parse_sql, to_normal_form, Constraint, ConstraintSet, NormalFormQuery, Schema};
use proptest::prelude::RngExt;
use proptest::test_runner::TestRng;

use super::{instances, tables_of};

pub const DOMAIN: [i64; 3] = [0, 1, 2];

#[derive(Clone, Debug)]
pub struct Case {
    pub schema_text: String,
    pub query_sql: String,
    pub view_sqls: Vec<String>,
    pub schema: Schema,
    pub constraints: Vec<Constraint>,
    pub query: NormalFormQuery,
    pub views: Vec<NormalFormQuery>,
    pub bound: usize,
}

struct Col {
    name: String,
    ty: ColumnType,
    nullable: bool,
}

fn schema_text(rng: &mut TestRng) -> (String, Vec<Vec<Col>>) {
    let ntables = rng.random_range(1..=3usize);
    let mut text = String::new();
    let mut tables: Vec<Vec<Col>> = Vec::new();
    let mut unique_cols: Vec<String> = Vec::new();
    for t in 0..ntables {
        let arity = rng.random_range(1..=2usize);
        let mut cols = Vec::new();
        let mut lines = Vec::new();
        let mut made_unique = Vec::new();
        for c in 0..arity {
            let name = format!("c{c}");
            let ty = if rng.random_bool(0.3) {
                ColumnType::Bool
            } else {
                ColumnType::Int
            };
            let nullable = ty == ColumnType::Int && rng.random_bool(0.25);
            let mut line = format!(
                "  {name} {}",
                if ty == ColumnType::Bool {
                    "bool"
                } else {
                    "int"
                }
            );
            if nullable {
                line.push_str(" nullable");
            } else if ty == ColumnType::Int && rng.random_bool(0.25) {
                line.push_str(" unique");
                made_unique.push(format!("t{t}.{name}"));
            } else if ty == ColumnType::Int && !unique_cols.is_empty() && rng.random_bool(0.3) {
                let target = &unique_cols[rng.random_range(0..unique_cols.len())];
                line.push_str(&format!(" fk {target}"));
            }
            lines.push(line);
            cols.push(Col { name, ty, nullable });
        }
        unique_cols.extend(made_unique);
        text.push_str(&format!("table t{t} {{\n{}\n}}\n", lines.join(",\n")));
        tables.push(cols);
    }
    (text, tables)
}

struct Sql {
    from: Vec<usize>,
    projection: String,
    conds: Vec<String>,
}

impl Sql {
    fn render(&self) -> String {
        let tables: Vec<String> = self.from.iter().map(|t| format!("t{t}")).collect();
        let mut sql = format!("SELECT {} FROM {}", self.projection, tables.join(", "));
        if !self.conds.is_empty() {
            sql.push_str(" WHERE ");
            sql.push_str(&self.conds.join(" AND "));
        }
        sql
    }

    /// `SELECT *` over the same tables with a random subset of the
    /// conditions, so that this query is answerable from it.
    fn widened(&self, rng: &mut TestRng) -> Sql {
        Sql {
            from: self.from.clone(),
            projection: "*".into(),
            conds: self
                .conds
                .iter()
                .filter(|_| rng.random_bool(0.5))
                .cloned()
                .collect(),
        }
    }
}

fn query_sql(rng: &mut TestRng, tables: &[Vec<Col>]) -> Sql {
    let mut from: Vec<usize> = vec![rng.random_range(0..tables.len())];
    if tables.len() > 1 && rng.random_bool(0.4) {
        let other = (from[0] + rng.random_range(1..tables.len())) % tables.len();
        from.push(other);
    }
    let cols: Vec<(usize, &Col)> = from
        .iter()
        .flat_map(|&t| tables[t].iter().map(move |c| (t, c)))
        .collect();
    let qual = |(t, c): (usize, &Col)| format!("t{t}.{}", c.name);

    let projection = if rng.random_bool(0.4) {
        "*".to_string()
    } else {
        let mut picked: Vec<String> = cols
            .iter()
            .filter(|_| rng.random_bool(0.5))
            .map(|&c| qual(c))
            .collect();
        if picked.is_empty() {
            picked.push(qual(cols[rng.random_range(0..cols.len())]));
        }
        picked.join(", ")
    };

    let mut conds = Vec::new();
    for _ in 0..rng.random_range(0..=2usize) {
        let a = cols[rng.random_range(0..cols.len())];
        let cond = match a.1.ty {
            ColumnType::Bool => {
                if rng.random_bool(0.5) {
                    qual(a)
                } else {
                    format!("NOT {}", qual(a))
                }
            }
            _ => match rng.random_range(0..5u32) {
                0 => format!("{} = {}", qual(a), rng.random_range(0..=2i64)),
                1 => format!("{} = MyUserId", qual(a)),
                2 if a.1.nullable => format!("{} IS NULL", qual(a)),
                2 => format!("{} < {}", qual(a), rng.random_range(1..=2i64)),
                _ => {
                    let ints: Vec<_> = cols
                        .iter()
                        .filter(|c| {
                            c.1.ty == ColumnType::Int && !(c.0 == a.0 && c.1.name == a.1.name)
                        })
                        .collect();
                    if ints.is_empty() {
                        format!("{} = {}", qual(a), rng.random_range(0..=2i64))
                    } else {
                        format!(
                            "{} = {}",
                            qual(a),
                            qual(*ints[rng.random_range(0..ints.len())])
                        )
                    }
                }
            },
        };
        conds.push(cond);
    }
    Sql {
        from,
        projection,
        conds,
    }
}

fn normal(sql: &str, schema: &Schema) -> NormalFormQuery {
    let ast = parse_sql(sql).unwrap_or_else(|e| panic!("{sql}: {e}"));
    to_normal_form(&ast, schema).unwrap_or_else(|e| panic!("{sql}: {e}"))
}

/// Number of brute-force instances above which a case drops to bound 1.
const INSTANCE_LIMIT: usize = 20_000;

pub fn case(rng: &mut TestRng) -> Case {
    let (schema_text, tables) = schema_text(rng);
    let schema = Schema::parse(&schema_text).expect("generated schema parses");
    let constraints = ConstraintSet::from_entries(generate_constraints(&schema), &schema)
        .expect("generated constraints expand")
        .constraints;
    let q = query_sql(rng, &tables);
    let mut view_sqls: Vec<String> = (0..rng.random_range(1..=3usize))
        .map(|_| query_sql(rng, &tables).render())
        .collect();
    if rng.random_bool(0.5) {
        let k = rng.random_range(0..view_sqls.len());
        view_sqls[k] = q.widened(rng).render();
    }
    let q_sql = q.render();
    let query = normal(&q_sql, &schema);
    let views: Vec<NormalFormQuery> = view_sqls.iter().map(|s| normal(s, &schema)).collect();

    let mut all: Vec<&NormalFormQuery> = views.iter().collect();
    all.push(&query);
    let estimate: usize = tables_of(&schema, &all, &constraints)
        .iter()
        .map(|t| {
            let tuples: usize = schema
                .table(t)
                .unwrap()
                .columns
                .iter()
                .map(|c| super::column_values(c.ty, c.nullable, &DOMAIN).len())
                .product();
            1 + tuples + tuples * (tuples - 1) / 2
        })
        .fold(1usize, |a, b| a.saturating_mul(b));
    let bound = if estimate <= INSTANCE_LIMIT { 2 } else { 1 };
    Case {
        schema_text,
        query_sql: q_sql,
        view_sqls,
        schema,
        constraints,
        query,
        views,
        bound,
    }
}

impl Case {
    pub fn instances(&self, strings: &Interner) -> Vec<polext::Database> {
        let mut all: Vec<&NormalFormQuery> = self.views.iter().collect();
        all.push(&self.query);
        let tables = tables_of(&self.schema, &all, &self.constraints);
        instances(
            &self.schema,
            &tables,
            self.bound,
            &DOMAIN,
            &self.constraints,
            strings,
        )
    }
}
