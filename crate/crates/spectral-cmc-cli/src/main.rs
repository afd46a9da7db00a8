fn main() {
    println!("spectral-cmc");
}
