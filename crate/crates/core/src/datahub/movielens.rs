//! Reader for the `::`-delimited MovieLens-1M files.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

use super::{Interaction, InteractionLog, UserProfile, PROFILE_DIM};

/// Category assigned to ratings whose movie is missing from `movies.dat`.
pub const UNKNOWN_GENRE: &str = "(unknown)";

const AGE_BUCKETS: [u32; 7] = [1, 18, 25, 35, 45, 50, 56];

#[derive(Clone, Debug, PartialEq)]
pub struct MovieLens {
    pub log: InteractionLog,
    pub profiles: Vec<UserProfile>,
    /// Original MovieLens user id per dense user id.
    pub user_ids: Vec<u32>,
    /// Original movie id per dense item id.
    pub movie_ids: Vec<u32>,
    pub genres: Vec<String>,
}

/// The files are Latin-1; every byte maps to the code point of equal value.
fn read_latin1(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(bytes.iter().map(|&b| b as char).collect())
}

fn fields<'a>(path: &Path, line_no: usize, line: &'a str, n: usize) -> Result<Vec<&'a str>> {
    let f: Vec<&str> = line.split("::").collect();
    if f.len() != n {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg: format!("expected {n} '::'-separated fields, found {}", f.len()),
        });
    }
    Ok(f)
}

fn number<T: std::str::FromStr>(path: &Path, line_no: usize, what: &str, s: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line: line_no,
        msg: format!("bad {what} {s:?}"),
    })
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

/// `(user, movie, timestamp)` triples from a ratings file. Every rating is a
/// positive event regardless of its value.
pub fn parse_ratings(path: &Path) -> Result<Vec<(u32, u32, i64)>> {
    let text = read_latin1(path)?;
    let mut out = Vec::new();
    for (no, line) in lines(&text) {
        let f = fields(path, no, line, 4)?;
        let user = number(path, no, "user id", f[0])?;
        let movie = number(path, no, "movie id", f[1])?;
        let _rating: f64 = number(path, no, "rating", f[2])?;
        let ts = number(path, no, "timestamp", f[3])?;
        out.push((user, movie, ts));
    }
    Ok(out)
}

/// Movie id to first listed genre.
pub fn parse_movies(path: &Path) -> Result<BTreeMap<u32, String>> {
    let text = read_latin1(path)?;
    let mut out = BTreeMap::new();
    for (no, line) in lines(&text) {
        // Titles never contain "::", but split from both ends anyway.
        let (head, genres) = line.rsplit_once("::").ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: no,
            msg: "expected MovieID::Title::Genres".into(),
        })?;
        let (id, _title) = head.split_once("::").ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: no,
            msg: "expected MovieID::Title::Genres".into(),
        })?;
        let id = number(path, no, "movie id", id)?;
        let first = genres.split('|').next().unwrap_or("").trim();
        let genre = if first.is_empty() { UNKNOWN_GENRE } else { first };
        out.insert(id, genre.to_string());
    }
    Ok(out)
}

/// Fixed 8-dim encoding: gender (+1 F / -1 M), age bucket scaled to
/// [-1, 1], occupation as five signed bits, first zip digit scaled to
/// [-1, 1] (0 when not a digit).
pub fn encode_profile(gender: &str, age: u32, occupation: u32, zip: &str) -> Vec<f64> {
    let mut v = Vec::with_capacity(PROFILE_DIM);
    v.push(if gender.trim().eq_ignore_ascii_case("F") { 1.0 } else { -1.0 });
    let bucket = AGE_BUCKETS.iter().rposition(|&a| age >= a).unwrap_or(0);
    v.push(2.0 * bucket as f64 / (AGE_BUCKETS.len() - 1) as f64 - 1.0);
    for bit in 0..5 {
        v.push(if occupation >> bit & 1 == 1 { 1.0 } else { -1.0 });
    }
    let zip_digit = zip.trim().chars().next().and_then(|c| c.to_digit(10));
    v.push(zip_digit.map_or(0.0, |d| d as f64 / 4.5 - 1.0));
    v
}

/// `user id -> profile features`.
pub fn parse_users(path: &Path) -> Result<BTreeMap<u32, Vec<f64>>> {
    let text = read_latin1(path)?;
    let mut out = BTreeMap::new();
    for (no, line) in lines(&text) {
        let f = fields(path, no, line, 5)?;
        let id = number(path, no, "user id", f[0])?;
        let g = f[1].trim();
        if g != "M" && g != "F" {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: no,
                msg: format!("bad gender {g:?}"),
            });
        }
        let age = number(path, no, "age", f[2])?;
        let occ = number(path, no, "occupation", f[3])?;
        out.insert(id, encode_profile(g, age, occ, f[4]));
    }
    Ok(out)
}

/// Reads `ratings.dat`, `movies.dat` and `users.dat` from `dir`.
///
/// Users and movies get dense ids in ascending original-id order; genres are
/// sorted by name. Users without a `users.dat` row get an all-zero profile.
pub fn parse_movielens(dir: &Path) -> Result<MovieLens> {
    let ratings = parse_ratings(&dir.join("ratings.dat"))?;
    let movies = parse_movies(&dir.join("movies.dat"))?;
    let users = parse_users(&dir.join("users.dat"))?;
    assemble(&ratings, &movies, &users)
}

pub(crate) fn assemble(
    ratings: &[(u32, u32, i64)],
    movies: &BTreeMap<u32, String>,
    users: &BTreeMap<u32, Vec<f64>>,
) -> Result<MovieLens> {
    if ratings.is_empty() {
        return Err(Error::Data("no ratings".into()));
    }
    let mut user_ids: Vec<u32> = ratings.iter().map(|r| r.0).collect();
    user_ids.sort_unstable();
    user_ids.dedup();
    let mut movie_ids: Vec<u32> = ratings.iter().map(|r| r.1).collect();
    movie_ids.sort_unstable();
    movie_ids.dedup();
    let genre_of = |m: u32| movies.get(&m).map_or(UNKNOWN_GENRE, |g| g.as_str());
    let mut genres: Vec<String> = movie_ids.iter().map(|&m| genre_of(m).to_string()).collect();
    genres.sort_unstable();
    genres.dedup();

    let item_category: Vec<usize> = movie_ids
        .iter()
        .map(|&m| genres.binary_search_by(|g| g.as_str().cmp(genre_of(m))).expect("genre listed"))
        .collect();
    let interactions = ratings
        .iter()
        .map(|&(u, m, ts)| {
            let item = movie_ids.binary_search(&m).expect("movie listed");
            Interaction {
                user: user_ids.binary_search(&u).expect("user listed"),
                item,
                category: item_category[item],
                timestamp: ts,
            }
        })
        .collect();
    let log = InteractionLog::new(interactions, user_ids.len(), movie_ids.len(), genres.len(), item_category)?;
    let profiles = user_ids
        .iter()
        .enumerate()
        .map(|(dense, id)| UserProfile {
            user: dense,
            features: users.get(id).cloned().unwrap_or_else(|| vec![0.0; PROFILE_DIM]),
        })
        .collect();
    Ok(MovieLens {
        log,
        profiles,
        user_ids,
        movie_ids,
        genres,
    })
}
