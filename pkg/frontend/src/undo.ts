/** Bounded undo/redo stack of immutable snapshots. */

export const MIN_UNDO_DEPTH = 20;

export class UndoStack<T> {
  private past: T[] = [];
  private future: T[] = [];
  readonly capacity: number;

  constructor(capacity = 50) {
    this.capacity = Math.max(capacity, MIN_UNDO_DEPTH);
  }

  push(snapshot: T): void {
    this.past.push(snapshot);
    if (this.past.length > this.capacity) this.past.shift();
    this.future = [];
  }

  get canUndo(): boolean {
    return this.past.length > 0;
  }

  get canRedo(): boolean {
    return this.future.length > 0;
  }

  get depth(): number {
    return this.past.length;
  }

  /** Pop the most recent snapshot; `current` becomes redoable. */
  undo(current: T): T | null {
    const snapshot = this.past.pop();
    if (snapshot === undefined) return null;
    this.future.push(current);
    return snapshot;
  }

  redo(current: T): T | null {
    const snapshot = this.future.pop();
    if (snapshot === undefined) return null;
    this.past.push(snapshot);
    return snapshot;
  }
}
