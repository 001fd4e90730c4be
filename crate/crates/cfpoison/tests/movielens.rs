use std::fs;
use std::path::Path;

use cfpoison::movielens::{
    load_movielens, load_ratings, subset, write_id_map, write_ratings, LoadError, LoadOptions,
};

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn opts(min_ratings: usize) -> LoadOptions {
    LoadOptions {
        min_ratings,
        ..LoadOptions::default()
    }
}

#[test]
fn rating_shift_endpoints_and_midpoint() {
    let o = LoadOptions::default();
    assert_eq!(o.shift(5.0), 2.0);
    assert_eq!(o.shift(0.5), -2.0);
    assert_eq!(o.shift(2.75), 0.0);
}

#[test]
fn custom_native_range() {
    let o = LoadOptions {
        native: (1.0, 5.0),
        ..LoadOptions::default()
    };
    assert_eq!(o.shift(1.0), -2.0);
    assert_eq!(o.shift(3.0), 0.0);
}

#[test]
fn filters_densifies_and_shifts() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "ratings.csv",
        "userId,movieId,rating,timestamp\n\
         7,100,5.0,1\n7,300,0.5,2\n7,200,2.75,3\n\
         3,300,4.0,4\n\
         9,100,1.0,5\n9,200,3.0,6\n",
    );
    let d = load_movielens(&p, &opts(2)).unwrap();
    assert_eq!(d.user_ids, vec![7, 9]);
    assert_eq!(d.item_ids, vec![100, 200, 300]);
    assert_eq!(d.ratings.num_users(), 2);
    assert_eq!(d.ratings.len(), 5);
    assert_eq!(d.ratings.get(0, 0), Some(2.0));
    assert_eq!(d.ratings.get(0, 2), Some(-2.0));
    assert_eq!(d.ratings.get(0, 1), Some(0.0));
    assert_eq!(d.ratings.get(1, 2), None);
}

#[test]
fn malformed_row_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "bad.csv",
        "userId,movieId,rating,timestamp\n1,2,3.0,0\n1,x,3.0,0\n",
    );
    match load_movielens(&p, &opts(1)) {
        Err(LoadError::Malformed { line, msg }) => {
            assert_eq!(line, 3);
            assert!(msg.contains("item"), "{msg}");
        }
        other => panic!("expected a malformed-row error, got {other:?}"),
    }
}

#[test]
fn everything_filtered_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "few.csv", "userId,movieId,rating,timestamp\n1,2,3.0,0\n");
    assert!(matches!(
        load_movielens(&p, &opts(20)),
        Err(LoadError::Empty { min_ratings: 20 })
    ));
}

#[test]
fn duplicate_rating_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "dup.csv",
        "userId,movieId,rating,timestamp\n1,2,3.0,0\n1,2,4.0,0\n",
    );
    assert!(matches!(load_movielens(&p, &opts(1)), Err(LoadError::Ratings(_))));
}

#[test]
fn missing_file_is_an_io_error() {
    let err = load_movielens(Path::new("/nonexistent/ratings.csv"), &opts(1)).unwrap_err();
    assert!(matches!(err, LoadError::Io { .. }));
}

#[test]
fn reserialization_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("userId,movieId,rating,timestamp\n");
    for u in 0..30u64 {
        for i in 0..(u % 7 + 18) {
            let r = 0.5 + 0.5 * ((u * 31 + i * 17) % 10) as f64;
            text.push_str(&format!("{},{},{r},{}\n", 1000 + u * 3, 50 + i * 11, u * i));
        }
    }
    let p = write(dir.path(), "ml.csv", &text);
    let d = load_movielens(&p, &opts(20)).unwrap();
    assert!(d.ratings.num_users() < 30);
    let out = dir.path().join("shifted.csv");
    write_ratings(&out, &d).unwrap();
    let back = load_ratings(&out).unwrap();
    assert_eq!(back, d);
}

#[test]
fn id_map_lists_every_index() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "r.csv",
        "userId,movieId,rating,timestamp\n42,7,3.0,0\n5,9,1.0,0\n",
    );
    let d = load_movielens(&p, &opts(1)).unwrap();
    let map = dir.path().join("ids.csv");
    write_id_map(&map, &d).unwrap();
    let text = fs::read_to_string(map).unwrap();
    assert_eq!(text, "kind,index,id\nuser,0,5\nuser,1,42\nitem,0,7\nitem,1,9\n");
}

#[test]
fn subset_keeps_leading_indices() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "r.csv",
        "userId,movieId,rating,timestamp\n1,1,1.0,0\n1,2,2.0,0\n2,1,3.0,0\n3,3,4.0,0\n",
    );
    let d = load_movielens(&p, &opts(1)).unwrap();
    let s = subset(&d, 2, 2).unwrap();
    assert_eq!(s.user_ids, vec![1, 2]);
    assert_eq!(s.item_ids, vec![1, 2]);
    assert_eq!(s.ratings.len(), 3);
}
