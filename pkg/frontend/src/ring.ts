/** Fixed-capacity FIFO over a circular array; push evicts the oldest. */
export class RingBuffer<T> {
  private readonly slots: (T | undefined)[];
  private head = 0; // index of the oldest element
  private count = 0;

  constructor(readonly capacity: number) {
    if (!Number.isInteger(capacity) || capacity <= 0) {
      throw new RangeError("capacity must be a positive integer");
    }
    this.slots = new Array<T | undefined>(capacity);
  }

  get length(): number {
    return this.count;
  }

  push(item: T): void {
    const tail = (this.head + this.count) % this.capacity;
    this.slots[tail] = item;
    if (this.count === this.capacity) {
      this.head = (this.head + 1) % this.capacity;
    } else {
      this.count += 1;
    }
  }

  at(i: number): T {
    if (i < 0 || i >= this.count) throw new RangeError(`index ${i} out of range`);
    return this.slots[(this.head + i) % this.capacity] as T;
  }

  last(): T | undefined {
    return this.count ? this.at(this.count - 1) : undefined;
  }

  toArray(): T[] {
    const out = new Array<T>(this.count);
    for (let i = 0; i < this.count; i++) out[i] = this.at(i);
    return out;
  }

  clear(): void {
    this.head = 0;
    this.count = 0;
    this.slots.fill(undefined);
  }
}
