"""How fast does one key cover a room?

Every participant who receives a clone immediately starts cloning, so
the seeded count roughly doubles each round (more with multi-port
hosts) and the whole room is covered in logarithmically many rounds.
This script sweeps room sizes and port counts and prints the effect on
rounds, wall-clock makespan, and amortized bandwidth.

Run: python3 demos/room_deployment.py
"""

from replikey import SimConfig, rounds_closed_form, run_room, summarize, time_series_rows


def show_table(rows):
    widths = [max(len(str(r[i])) for r in rows) for i in range(len(rows[0]))]
    for row in rows:
        print("  " + "  ".join(str(c).rjust(w) for c, w in zip(row, widths)))


def main():
    print("a classroom of 60, one 2.7 GB key, one port per machine:")
    result = run_room(SimConfig(n_participants=60))
    print(f"  rounds:    {result.rounds}")
    print(f"  makespan:  {float(result.makespan_s):.0f} s "
          f"({float(result.makespan_s) / 60:.0f} min)")
    print(f"  amortized: {float(result.amortized_mb_s):.1f} MB/s "
          f"from a 4.5 MB/s medium")
    print()
    print("  seeded keys after each round:")
    show_table(time_series_rows(result))
    print()

    print("every key spawns once per round it spends seeding, so the")
    print("per-key genealogies account for the whole room:")
    total = len(result.genealogies)
    spawned = result.bytes_delivered // 2_700_000_000
    print(f"  {total} keys, {spawned} of them written on site")
    print()

    print("room size barely matters, ports help more:")
    results = [
        run_room(
            SimConfig(n_participants=n, ports_per_host=p, track_genealogies=False)
        )
        for n in (16, 60, 240, 1000)
        for p in (1, 2, 4)
    ]
    show_table(summarize(results))
    print()

    print("doubling the room adds at most one round (one port per host):")
    n = 30
    while n <= 1920:
        print(f"  n={n:5d}  rounds={rounds_closed_form(n, 1, 1)}")
        n *= 2


if __name__ == "__main__":
    main()
