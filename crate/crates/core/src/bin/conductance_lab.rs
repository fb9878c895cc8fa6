fn main() {
    eprintln!("conductance-lab: command-line interface under construction");
    std::process::exit(2);
}
