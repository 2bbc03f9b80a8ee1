fn main() {
    println!("slu");
}
